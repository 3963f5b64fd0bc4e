"""The reduction machine: dispatch, beta, if, placement, errors, conservation."""

import queue

import pytest

from gprm import compiler, kernels, lang, vm, words as W
from gprm.kernels import NO_RESULT, KernelError
from gprm.vm import (
    REQ,
    RES,
    Machine,
    Packet,
    ProtocolError,
    ResourceLeakError,
    StuckReductionError,
    TaskError,
    VmError,
)

from conftest import execute, fresh_registry


def compile_for(text, tiles, registry):
    return compiler.compile_text(text, tiles, registry)


def reg_with_stubs():
    reg = fresh_registry()
    kernels.add_stub_service(reg, "t1", ["m1", "m2"])
    kernels.add_stub_service(reg, "t2", ["m1", "m3"])
    kernels.add_stub_service(reg, "t3", ["m4"])
    return reg


# ── basics ───────────────────────────────────────────────────────────


def test_arithmetic_forced():
    assert execute("(+ '2 '3)", threads=2) == 5
    assert execute("(* (- '5 '1) (+ '5 '1))", threads=4) == 24


def test_boot_zero_threads_rejected():
    reg = fresh_registry()
    img = compile_for("(+ '1 '2)", 2, reg)
    with pytest.raises(VmError, match="no tile to host the root"):
        Machine(img, reg, 0)


def test_same_value_across_thread_counts():
    text = "(beta (lambda 'x '(* (- x '1) (+ x '1))) (+ '2 '3))"
    values = {execute(text, threads=t) for t in (1, 2, 4, 8)}
    assert values == {24}


def test_boot_twice_independent_machines():
    reg = fresh_registry()
    img = compile_for("(+ (ctrl.arg '0) '1)", 2, reg)
    with Machine(img, reg, 2) as a, Machine(img, reg, 2) as b:
        assert a.run_value((1,)) == 2
        assert b.run_value((10,)) == 11
        assert a.run_value((5,)) == 6


def test_symbol_mismatch_rejected():
    reg = reg_with_stubs()
    img = compile_for("(t1.m1 '1)", 2, reg)
    other = fresh_registry()
    kernels.add_stub_service(other, "zZ", ["m9"])  # shifts service ids
    kernels.add_stub_service(other, "t1", ["m1"])
    with pytest.raises(VmError, match="symbol mismatch"):
        Machine(img, other, 2)


def test_dataflow_example_with_stub_kernels():
    # stage kernels: +1, *2, +3, then sum
    reg = fresh_registry()
    reg.register("t1", [("m1", 1, lambda c, v: v + 1), ("m2", 2, lambda c, a, b: a + b)])
    reg.register("t2", [("m1", 1, lambda c, v: v * 2), ("m2", 1, lambda c, v: v + 3)])
    text = "(beta (lambda 'v1 '(t1.m2 (t2.m1 v1) (t2.m2 v1))) (t1.m1 (ctrl.arg '0)))"
    assert execute(text, threads=4, args=(7,), registry=reg) == 27


def test_multiplexed_tiles_on_fewer_threads():
    reg = reg_with_stubs()
    img = compile_for("(t1.m2 (t2.m3 '42) (t3.m4))", 8, reg)
    with Machine(img, reg, 3) as m:
        assert m.run_value() == 42
    with Machine(img, reg, 1) as m:
        assert m.run_value() == 42


# ── packet behaviour (trace) ─────────────────────────────────────────


def test_leaf_entry_no_argument_requests():
    out = execute("(t2.m3 '42)", threads=2, registry=reg_with_stubs(),
                  trace=True, keep=True)
    try:
        assert out.value == 42
        assert len(out.requests()) == 1  # only the root reference itself
    finally:
        out.machine.shutdown()


def test_two_reference_arguments_two_requests():
    out = execute("(t1.m2 (t2.m3 '42) (t3.m4))", threads=4,
                  registry=reg_with_stubs(), trace=True, keep=True)
    try:
        addr_reqs = [p for p in out.requests()
                     if W.ref_addr(p.payload[0]) in (1, 2)]
        assert len(addr_reqs) == 2
    finally:
        out.machine.shutdown()


def test_ctrl_run_quoted_argument_not_dispatched_at_parse():
    reg = reg_with_stubs()
    out = execute("(ctrl.run '(t1.m1) (+ '1 '2))", threads=4, registry=reg,
                  trace=True, keep=True)
    try:
        target = next(a for a, e in out.flat.entries.items() if e.op == "t1.m1")
        reqs = [p for p in out.requests() if W.ref_addr(p.payload[0]) == target]
        assert len(reqs) == 1  # only the restart, not the parse
        assert reqs[0].dst == 3 % out.machine.tile_count
    finally:
        out.machine.shutdown()


def test_trace_file_format(tmp_path):
    out = execute("(+ '1 '2)", threads=2, trace=True, keep=True)
    try:
        path = tmp_path / "trace.log"
        out.machine.write_trace(path)
        lines = path.read_text().splitlines()
        assert lines
        for i, line in enumerate(lines):
            seq, kind, src, dst, caller_addr, arg_idx, payload = line.split()
            assert int(seq) == i
            assert kind in ("REQ", "RES")
            int(src), int(dst), int(caller_addr), int(arg_idx)
            int(payload.split(",")[0], 16)
    finally:
        out.machine.shutdown()


# ── beta reduction ───────────────────────────────────────────────────


def test_beta_square_identity():
    assert execute("(beta (lambda 'x '(* (- x '1) (+ x '1))) '5)") == 24


def test_beta_atom_bodies():
    assert execute("(beta (lambda 'x 'x) '7)") == 7
    assert execute("(beta (lambda 'x '3) '9)") == 3
    assert execute("(beta (lambda 'x 'x) (+ '1 '2))") == 3


def test_beta_quoted_operand_deferred():
    # quoted operand: evaluated at the occurrence, after substitution
    assert execute("(beta (lambda 'x '(+ x x)) '(+ '1 '2))") == 6


def test_beta_handle_substituted_into_body_position():
    # inner lambda's body is a free variable of the outer lambda; once the
    # outer application substitutes a handle there, the inner application
    # must return that handle, not treat it as code
    text = "(beta (lambda 'x '(beta (lambda 'y 'x) '1)) (emptylist))"
    assert execute(text, threads=4, timeout=10.0) == []
    text2 = "(beta (lambda 'x '(beta (lambda 'y 'x) '1)) (cons '9 (emptylist)))"
    assert execute(text2, threads=2, timeout=10.0) == [9]


def test_beta_lambda_value_flows():
    text = "(beta (beta (lambda 'f 'f) (lambda 'y '(+ y '1))) '4)"
    assert execute(text) == 5


def test_beta_arity_mismatch():
    with pytest.raises(TaskError, match="arity mismatch"):
        execute("(beta (lambda 'x 'x) '1 '2)")


def test_beta_non_lambda_operator():
    with pytest.raises(TaskError, match="not a lambda value"):
        execute("(beta (+ '1 '2) '3)")
    with pytest.raises(TaskError, match="not a lambda value"):
        execute("(beta '5 '1)")


def test_recursion_fresh_code_per_application():
    # triangular numbers by self-application
    text = """
    (beta (lambda 'f 'n '(beta f f n))
          (lambda 'f 'n '(if (>= n '1) '(+ n (beta f f (- n '1))) '0))
          '10)
    """
    out = execute(text, threads=4, keep=True)
    try:
        assert out.value == 55
        # every application copied the body into the runtime region
        assert sum(t.arena_next for t in out.machine.tiles) > 10
    finally:
        out.machine.shutdown()


def test_runtime_arena_reset_between_runs():
    reg = fresh_registry()
    img = compile_for("(beta (lambda 'x '(+ x x)) (ctrl.arg '0))", 2, reg)
    with Machine(img, reg, 2) as m:
        assert m.run_value((3,)) == 6
        used_first = sum(t.arena_next for t in m.tiles)
        assert m.run_value((5,)) == 10
        assert sum(t.arena_next for t in m.tiles) == used_first


def test_beta_nullary_lambda():
    assert execute("(beta (lambda '(+ '1 '2)))") == 3


def test_lambda_root_returns_opaque_value():
    out = execute("(lambda 'x '(+ x '1))", threads=2)
    assert repr(out) == "<lambda>"


def test_label_shared_entry_evaluated_per_request():
    assert execute("(+ (label L (* '2 '3)) L)", threads=4) == 12
    assert execute("(+ (label L (* '2 '3)) (+ L L))", threads=4) == 18


# ── if ───────────────────────────────────────────────────────────────


def test_if_selects_and_never_requests_unselected():
    out = execute("(if (>= '3 '3) '(+ '1 '2) '(* '3 '4))", threads=4,
                  trace=True, keep=True)
    try:
        assert out.value == 3
        false_addr = out.flat.entries[out.flat.root].args[2].addr
        reachable = {false_addr}
        stack = [false_addr]
        while stack:
            for a in out.flat.entries[stack.pop()].args:
                if isinstance(a, compiler.WRef) and a.addr not in reachable:
                    reachable.add(a.addr)
                    stack.append(a.addr)
        assert all(W.ref_addr(p.payload[0]) not in reachable for p in out.requests())
    finally:
        out.machine.shutdown()


def test_if_zero_is_false_nonzero_true():
    assert execute("(if '0 '1 '2)") == 2
    assert execute("(if '-7 '1 '2)") == 1


def test_if_constant_branches():
    assert execute("(if (>= '3 '3) ''1 ''0)") == 1


def test_if_unquoted_branch_evaluated_eagerly():
    # documented hazard: unquoted reference branches are requested at parse
    reg = fresh_registry(log_jitter=0.0)
    out = execute("(if '1 (log.rec '10) (log.rec '20))", threads=1,
                  registry=reg, keep=True)
    try:
        assert out.value == 10
        events = out.machine.shared_state("log").get("events", [])
        assert sorted(events) == [10, 20]
    finally:
        out.machine.shutdown()


def test_if_condition_must_be_integer():
    with pytest.raises(TaskError, match="condition"):
        execute("(if (emptylist) '1 '2)")
    with pytest.raises(TaskError, match="condition"):
        execute("(if '(+ '1 '2) '1 '2)")


# ── ctrl.run / restart ───────────────────────────────────────────────


def test_ctrl_run_places_on_requested_tile():
    reg = reg_with_stubs()
    for t in range(4):
        out = execute(f"(ctrl.run '(t1.m1) '{t})", threads=4, registry=reg,
                      trace=True, keep=True)
        try:
            target = next(a for a, e in out.flat.entries.items() if e.op == "t1.m1")
            req = next(p for p in out.requests()
                       if W.ref_addr(p.payload[0]) == target)
            assert req.dst == t
        finally:
            out.machine.shutdown()


def test_ctrl_run_single_tile():
    assert execute("(ctrl.run '(+ '2 '2) '0)", threads=1) == 4


def test_ctrl_run_wraps_out_of_range_tile():
    out = execute("(ctrl.run '(+ '2 '2) '13)", threads=4, trace=True, keep=True)
    try:
        assert out.value == 4
        target = next(a for a, e in out.flat.entries.items() if e.op == "+")
        req = next(p for p in out.requests() if W.ref_addr(p.payload[0]) == target)
        assert req.dst == 13 % 4
    finally:
        out.machine.shutdown()


def test_ctrl_run_requires_quoted_reference():
    with pytest.raises(TaskError, match="quoted reference"):
        execute("(ctrl.run (+ '1 '2) '0)")


# ── kernels and errors ───────────────────────────────────────────────


def test_error_carries_subtask_chain():
    reg = reg_with_stubs()
    with pytest.raises(TaskError) as ei:
        execute("(t1.m2 (head (emptylist)) '1)", registry=reg)
    assert "head of empty list" in str(ei.value)
    assert ei.value.frames == ("head", "t1.m2")


def test_kernel_panic_becomes_error_result():
    reg = fresh_registry()
    reg.register("boom", [("go", 0, lambda c: 1 // 0)])
    with pytest.raises(TaskError, match="ZeroDivisionError"):
        execute("(boom.go)", registry=reg)


def test_quoted_code_rejected_by_non_control_kernel():
    reg = reg_with_stubs()
    with pytest.raises(TaskError, match="non-control"):
        execute("(t1.m1 '(t2.m1 '1))", registry=reg)


def test_ctrl_arg_out_of_range():
    with pytest.raises(TaskError, match="out of range"):
        execute("(ctrl.arg '5)", args=(1,))


def test_host_args_reach_kernels():
    assert execute("(+ (ctrl.arg '0) (ctrl.arg '1))", args=(30, 12)) == 42


def test_register_data_and_ctrl_reg():
    reg = fresh_registry()
    blob = [9, 9, 9]
    out = execute("(ctrl.reg '0)", registry=reg, data=(blob,))
    assert out == [9, 9, 9]  # lists materialize through the handle


def test_per_tile_kernel_instance_state():
    # a counting kernel pinned per tile: state does not leak across tiles
    reg = fresh_registry()

    def bump(ctx, _):
        state = ctx.local("cnt")
        state["n"] = state.get("n", 0) + 1
        return state["n"] * 10 + ctx.tile_id

    reg.register("cnt", [("bump", 1, bump)])
    out = execute("(+ (ctrl.run '(cnt.bump '0) '0) (ctrl.run '(cnt.bump '0) '1))",
                  threads=2, registry=reg)
    # each tile saw its own first call: 10+tile0 and 10+tile1
    assert out == (10 + 0) + (10 + 1)


def test_stuck_reduction_detected():
    reg = fresh_registry()
    reg.register("sink", [("hole", 1, lambda ctx, ws: NO_RESULT, True)])
    with pytest.raises(StuckReductionError, match="stuck reduction"):
        execute("(sink.hole '1)", registry=reg, timeout=10.0)


# ── overload policies ────────────────────────────────────────────────


def test_overload_grow():
    text = "(+ (+ '1 (+ '2 '3)) (+ '4 (+ '5 '6)))"
    assert execute(text, threads=1, capacity=1, overload="grow") == 21


def test_overload_block_requeues():
    text = "(+ (+ '1 '2) (+ '3 '4))"
    assert execute(text, threads=1, capacity=2, overload="block") == 10


# ── controllable interleaving harness ────────────────────────────────


class Manual:
    """Workers stopped; packets are handled by hand in a chosen order."""

    def __init__(self, text, registry, tiles=2):
        img = compiler.compile_text(text, tiles, registry)
        self.machine = Machine(img, registry, tiles)
        self.machine.shutdown()

    def inject_root(self):
        root = self.machine.image.root
        gw = self.machine.gateway_tile
        self.machine.send(REQ, gw, W.ref_tile(root), (gw, 0, 0), (root,))
        self.step_all()

    def pending(self):
        pkts = []
        for w in self.machine.workers:
            while True:
                try:
                    pkts.append(w.queue.get_nowait())
                except queue.Empty:
                    break
        return pkts

    def step_all(self):
        while True:
            pkts = self.pending()
            if not pkts:
                return
            for p in pkts:
                self.machine.tiles[p.dst].handle(p)

    def result(self):
        return self.machine._gateway.get_nowait()


def test_result_arrival_order_does_not_matter():
    calls = []
    reg = fresh_registry()
    reg.register("k", [
        ("pair", 2, lambda c, a, b: calls.append((a, b)) or (a * 100 + b)),
        ("a", 0, lambda c: 1),
        ("b", 0, lambda c: 2),
    ])
    for flip in (False, True):
        calls.clear()
        h = Manual("(k.pair (k.a) (k.b))", reg, tiles=4)
        root = h.machine.image.root
        gw = h.machine.gateway_tile
        h.machine.send(REQ, gw, W.ref_tile(root), (gw, 0, 0), (root,))
        (rootpkt,) = h.pending()
        h.machine.tiles[rootpkt.dst].handle(rootpkt)
        kids = h.pending()
        assert len(kids) == 2 and all(p.kind == REQ for p in kids)
        if flip:
            kids.reverse()
        for p in kids:  # each produces a RES; deliver in this order
            h.machine.tiles[p.dst].handle(p)
        h.step_all()
        res = h.result()
        assert res.kind == RES
        assert h.machine.decode_word(res.payload[0]) == 102
        assert calls == [(1, 2)]  # same argument vector either way
        h.machine.check_conservation()


def test_freed_address_reused_by_next_request():
    reg = fresh_registry()
    h = Manual("(+ '1 '2)", reg, tiles=1)
    tile = h.machine.tiles[0]
    top = tile.subtask_stack[-1]
    h.inject_root()
    assert h.machine.decode_word(h.result().payload[0]) == 3
    assert tile.subtask_stack[-1] == top  # freed back to the top of the stack
    h.inject_root()
    assert h.machine.decode_word(h.result().payload[0]) == 3


def test_result_for_freed_record_is_fatal():
    reg = fresh_registry()
    h = Manual("(+ '1 '2)", reg, tiles=1)
    h.inject_root()
    res = h.result()
    assert h.machine.decode_word(res.payload[0]) == 3
    # deliver a stale result for the (now freed) root record
    stale = Packet(RES, 0, 0, 0, 0, 0, (W.mk_const(9),))
    h.machine.tiles[0].handle(stale)
    assert isinstance(h.machine._fatal, ProtocolError)


def test_conservation_check_detects_leaks():
    reg = fresh_registry()
    img = compiler.compile_text("(+ '1 '2)", 2, reg)
    with Machine(img, reg, 2) as m:
        m.run_value()
        m.check_conservation()
        m.tiles[0].subtask_stack.pop()  # simulate a leak
        with pytest.raises(ResourceLeakError):
            m.check_conservation()
