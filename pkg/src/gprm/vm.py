"""The parallel reduction machine.

A machine is a pool of tiles, one event loop each, exchanging packets through
FIFO queues.  A reference packet asks a tile to evaluate one flat S-expression:
the tile allocates a subtask record, stores present arguments, requests
referenced arguments from their tiles, and invokes the kernel once every slot
is filled.  Results travel back to the requesting record's slot.  Beta
reduction is string reduction: the lambda body's entries are copied into a
per-tile runtime code region with argument words substituted for variable
words, and the fresh root is dispatched.

Ownership rules (the whole concurrency argument):
  - a tile's subtask records and its runtime code arena are touched only by
    the thread hosting that tile;
  - the compile-time code region is immutable after boot;
  - runtime code entries are written before the packet referencing them is
    queued, and queue hand-off orders the write before any remote read;
  - the only inter-tile channel is the packet queues.

Tiles may outnumber worker threads, in which case tiles map onto workers
round-robin and each worker serves its tiles' packets from one merged FIFO.
The host gateway behaves as one extra pseudo-tile (id == tile_count).
"""

from __future__ import annotations

import operator
import queue
import random
import threading
import time
from dataclasses import dataclass

from . import words as W
from .kernels import KernelError, NO_RESULT, is_list, materialize

RUNTIME_BASE = 1 << 31
RUNTIME_STRIDE = 1 << 20
MAX_TILES = ((1 << 32) - RUNTIME_BASE) // RUNTIME_STRIDE

REQ = 0
RES = 1
_KIND_NAMES = {REQ: "REQ", RES: "RES"}

REQUESTED = 0
PRESENT = 1

_STOP = object()


class VmError(Exception):
    pass


class StuckReductionError(VmError):
    pass


class ProtocolError(VmError):
    pass


class ResourceLeakError(VmError):
    pass


class TaskError(VmError):
    """A kernel or reduction error, with the subtask chain it crossed."""

    def __init__(self, message, frames=()):
        self.message = message
        self.frames = tuple(frames)
        chain = " <- ".join(self.frames)
        super().__init__(f"{message} [{chain}]" if chain else message)


@dataclass(frozen=True)
class Packet:
    kind: int
    src: int
    dst: int
    caller_tile: int
    caller_addr: int
    caller_arg: int
    payload: tuple


@dataclass(frozen=True)
class ErrorInfo:
    message: str
    frames: tuple


class LambdaValue:
    """Opaque stand-in when a run returns a lambda."""

    __slots__ = ()

    def __repr__(self):
        return "<lambda>"


LAMBDA_VALUE = LambdaValue()


class SubtaskRecord:
    __slots__ = ("live", "op_word", "self_ref", "caller", "slots", "status",
                 "pending", "phase", "err")

    def __init__(self):
        self.live = False
        self.op_word = 0
        self.self_ref = 0
        self.caller = (0, 0, 0)
        self.slots = []
        self.status = []
        self.pending = 0
        self.phase = 0
        self.err = None


class KernelContext:
    """What a kernel method may see of the engine."""

    def __init__(self, tile):
        self._tile = tile
        self._machine = tile.machine
        self._rec = None

    @property
    def tile_id(self):
        return self._tile.tile_id

    @property
    def random(self):
        return self._tile.rng

    def host_arg(self, i):
        args = self._machine.host_args
        if not 0 <= i < len(args):
            raise KernelError(f"ctrl.arg index {i} out of range ({len(args)} supplied)")
        return args[i]

    def data(self, i):
        data = self._machine._data
        if not 0 <= i < len(data):
            raise KernelError(f"ctrl.reg index {i} out of range ({len(data)} registered)")
        return data[i]

    def shared(self, name):
        return self._machine.shared_state(name), self._machine._shared_lock

    def local(self, name):
        """Per-tile instance state for the named service (no lock needed:
        kernels are pinned, one tile's loop runs them one at a time)."""
        return self._tile.local_state.setdefault(name, {})

    def restart(self, ref_word, tile_id):
        """Rewrite the reference's tile field, drop the quote, re-dispatch.

        The restarted computation answers this record's caller directly."""
        self._machine.restart_evaluation(ref_word, tile_id, self._rec.caller,
                                         src=self._tile.tile_id)


class Tile:
    def __init__(self, machine, tile_id):
        self.machine = machine
        self.tile_id = tile_id
        cap = machine.capacity
        self.subtask_list = [SubtaskRecord() for _ in range(cap)]
        self.subtask_stack = list(range(cap - 1, -1, -1))
        self.arena = {}
        self.arena_next = 0
        self.local_state = {}
        seed = machine.fuzz_seed
        self.rng = random.Random(None if seed is None else seed + 7919 * tile_id)
        self.ctx = KernelContext(self)

    # ── record allocation ────────────────────────────────────

    def alloc_record(self):
        if not self.subtask_stack:
            if self.machine.overload == "grow":
                base = len(self.subtask_list)
                grow = base  # double
                self.subtask_list.extend(SubtaskRecord() for _ in range(grow))
                self.subtask_stack.extend(range(base + grow - 1, base - 1, -1))
            else:
                return None  # caller re-enqueues ("block" policy)
        return self.subtask_stack.pop()

    def free_record(self, addr, rec):
        rec.live = False
        rec.slots = []
        rec.status = []
        self.subtask_stack.append(addr)

    # ── packet handlers ──────────────────────────────────────

    def handle(self, pkt):
        if pkt.kind == REQ:
            self.on_request(pkt)
        else:
            self.on_result(pkt)

    def on_request(self, pkt):
        addr = self.alloc_record()
        if addr is None:
            self.machine._enqueue(pkt)  # tile overloaded: retry after a free
            return
        ref = pkt.payload[0]
        try:
            code = self.machine.code_words(W.ref_addr(ref))
        except KeyError:
            self.machine.set_fatal(ProtocolError(
                f"reference to unknown code address {W.ref_addr(ref)}"))
            self.subtask_stack.append(addr)
            return
        rec = self.subtask_list[addr]
        rec.live = True
        rec.err = None
        rec.phase = 1
        rec.self_ref = ref
        rec.caller = (pkt.caller_tile, pkt.caller_addr, pkt.caller_arg)
        rec.op_word = code[0]
        nargs = len(code) - 1
        rec.slots = [0] * nargs
        rec.status = [PRESENT] * nargs
        pending = 0
        for i in range(nargs):
            w = code[i + 1]
            if W.kind_of(w) == W.KIND_REF and not W.is_quoted(w):
                rec.status[i] = REQUESTED
                pending += 1
            else:
                rec.slots[i] = w
        rec.pending = pending
        if pending:
            # request after the record is consistent; replies may race in
            for i in range(nargs):
                if rec.status[i] == REQUESTED:
                    w = code[i + 1]
                    self.machine.send(REQ, self.tile_id, W.ref_tile(w),
                                      (self.tile_id, addr, i), (w,))
        else:
            self.finish(addr, rec)

    def on_result(self, pkt):
        addr = pkt.caller_addr
        rec = self.subtask_list[addr] if addr < len(self.subtask_list) else None
        if rec is None or not rec.live or rec.status[pkt.caller_arg] != REQUESTED:
            self.machine.set_fatal(ProtocolError(
                f"result for freed or unexpected record t{self.tile_id}/{addr} "
                f"arg {pkt.caller_arg}"))
            return
        w = pkt.payload[0]
        rec.slots[pkt.caller_arg] = w
        rec.status[pkt.caller_arg] = PRESENT
        rec.pending -= 1
        if W.kind_of(w) == W.KIND_ERROR and rec.err is None:
            rec.err = w
        if rec.pending == 0:
            self.finish(addr, rec)

    # ── reduction ────────────────────────────────────────────

    def op_name(self, op_word):
        k = W.kind_of(op_word)
        if k == W.KIND_BUILTIN:
            return {W.FORM_CODE_LAMBDA: "lambda", W.FORM_CODE_BETA: "beta",
                    W.FORM_CODE_IF: "if"}[W.builtin_form(op_word)]
        sid, mid = W.oper_ids(op_word)
        return self.machine.registry.op_name(sid, mid)

    def finish(self, addr, rec):
        rec.phase = 2
        if rec.err is not None:
            # error short-circuits the kernel but waited for all slots
            self.reply_error_word(rec, rec.err)
            self.free_record(addr, rec)
            return
        k = W.kind_of(rec.op_word)
        if k == W.KIND_BUILTIN:
            form = W.builtin_form(rec.op_word)
            if form == W.FORM_CODE_LAMBDA:
                self.reply(rec, W.set_quote(W.clear_quote(rec.self_ref)))
            elif form == W.FORM_CODE_IF:
                self.eval_if(rec)
            else:
                self.beta_reduce(rec)
        elif k == W.KIND_OPER:
            self.invoke_kernel(addr, rec)
            return  # invoke_kernel frees
        else:
            self.reply_error(rec, "entry does not start with an operation")
        self.free_record(addr, rec)

    def reply(self, rec, word):
        self.machine.send(RES, self.tile_id, rec.caller[0],
                          rec.caller, (word,))

    def reply_error(self, rec, message):
        info = ErrorInfo(message, (self.op_name(rec.op_word),))
        self.reply(rec, W.mk_error(self.machine.wrap_handle(info)))

    def reply_error_word(self, rec, err_word):
        info = self.machine.handle_object(W.handle_index(err_word))
        chained = ErrorInfo(info.message, info.frames + (self.op_name(rec.op_word),))
        self.reply(rec, W.mk_error(self.machine.wrap_handle(chained)))

    def eval_if(self, rec):
        if len(rec.slots) != 3:
            self.reply_error(rec, "if expects a condition and two branches")
            return
        cw = rec.slots[0]
        if W.kind_of(cw) != W.KIND_CONST:
            self.reply_error(rec, "if condition did not evaluate to an integer")
            return
        selected = rec.slots[1] if W.const_value(cw) != 0 else rec.slots[2]
        if W.kind_of(selected) == W.KIND_REF:
            # deferred branch: drop the quote, restart with our caller as
            # continuation; the unselected branch is never dispatched
            w = W.clear_quote(selected)
            self.machine.send(REQ, self.tile_id, W.ref_tile(w), rec.caller, (w,))
        else:
            self.reply(rec, W.clear_quote(selected))

    def beta_reduce(self, rec):
        if not rec.slots:
            self.reply_error(rec, "operator is not a lambda value")
            return
        opw = rec.slots[0]
        if W.kind_of(opw) != W.KIND_REF or not W.is_quoted(opw):
            self.reply_error(rec, "operator is not a lambda value")
            return
        try:
            lam = self.machine.code_words(W.ref_addr(opw))
        except KeyError:
            self.reply_error(rec, "operator references unknown code")
            return
        if W.kind_of(lam[0]) != W.KIND_BUILTIN or \
                W.builtin_form(lam[0]) != W.FORM_CODE_LAMBDA:
            self.reply_error(rec, "operator is not a lambda value")
            return
        formals, body_w = lam[1:-1], lam[-1]
        operands = rec.slots[1:]
        if len(operands) != len(formals):
            self.reply_error(
                rec, f"lambda arity mismatch: {len(formals)} formals, "
                     f"{len(operands)} operands")
            return
        # the quote is removed during substitution so deferred references
        # get evaluated where they land
        subst = {W.var_slot(f): W.clear_quote(v) for f, v in zip(formals, operands)}
        bk = W.kind_of(body_w)
        if bk == W.KIND_REF:
            try:
                new_root = self.copy_closure(W.ref_addr(body_w), subst)
            except VmError as e:
                self.reply_error(rec, str(e))
                return
            w = W.mk_ref(new_root, W.ref_tile(body_w))
            self.machine.send(REQ, self.tile_id, W.ref_tile(w), rec.caller, (w,))
        elif bk == W.KIND_VAR:
            w = subst.get(W.var_slot(body_w))
            if w is None:
                self.reply_error(rec, "unbound variable in lambda body")
            elif W.kind_of(w) == W.KIND_REF:
                self.machine.send(REQ, self.tile_id, W.ref_tile(w), rec.caller, (w,))
            else:
                self.reply(rec, w)
        else:
            # constant body, or any value substituted into a copied lambda's
            # body position (a handle is not a reference: return it)
            self.reply(rec, W.clear_quote(body_w) if bk in W.QUOTABLE_KINDS else body_w)

    def copy_closure(self, root_addr, subst):
        """String reduction: copy the body's transitive entries into this
        tile's runtime arena, substituting argument words for variable words."""
        machine = self.machine
        mapping = {}

        def copy(a):
            na = mapping.get(a)
            if na is not None:
                return na
            na = self.alloc_code_addr()
            mapping[a] = na
            code = machine.code_words(a)
            out = [code[0]]
            for w in code[1:]:
                k = W.kind_of(w)
                if k == W.KIND_REF:
                    out.append(W.mk_ref(copy(W.ref_addr(w)), W.ref_tile(w),
                                        W.is_quoted(w)))
                elif k == W.KIND_VAR:
                    s = subst.get(W.var_slot(w))
                    if s is None:
                        out.append(w)  # someone else's formal
                    elif W.is_quoted(w) and W.kind_of(s) in W.QUOTABLE_KINDS:
                        out.append(W.set_quote(s))  # deferred occurrence stays deferred
                    else:
                        out.append(s)
                else:
                    out.append(w)
            self.arena[na] = tuple(out)
            return na

        return copy(root_addr)

    def alloc_code_addr(self):
        if self.arena_next >= RUNTIME_STRIDE:
            raise VmError("address space exhausted (runtime code region)")
        addr = RUNTIME_BASE + self.tile_id * RUNTIME_STRIDE + self.arena_next
        self.arena_next += 1
        return addr

    # ── kernel dispatch ──────────────────────────────────────

    def invoke_kernel(self, addr, rec):
        machine = self.machine
        sid, mid = W.oper_ids(rec.op_word)
        try:
            service, spec = machine.registry.spec(sid, mid)
        except KernelError:
            machine.set_fatal(ProtocolError(f"undispatchable operation id {sid}.{mid}"))
            self.free_record(addr, rec)
            return
        self.ctx._rec = rec
        try:
            if spec.control:
                value = machine.registry.invoke(service, mid, self.ctx, rec.slots)
            else:
                args = [self.unwrap(w, spec) for w in rec.slots]
                value = machine.registry.invoke(service, mid, self.ctx, args)
        except KernelError as e:
            self.reply_error(rec, str(e))
            self.free_record(addr, rec)
            return
        except Exception as e:  # kernel panic becomes an error result
            self.reply_error(rec, f"{type(e).__name__}: {e}")
            self.free_record(addr, rec)
            return
        finally:
            self.ctx._rec = None
        if value is not NO_RESULT:
            try:
                self.reply(rec, machine.wrap_value(value))
            except KernelError as e:
                self.reply_error(rec, str(e))
        self.free_record(addr, rec)

    def unwrap(self, w, spec):
        """Evaluated word -> kernel value; only control methods may see code."""
        k = W.kind_of(w)
        if k == W.KIND_CONST:
            return W.const_value(w)
        if k == W.KIND_HANDLE:
            return self.machine.handle_object(W.handle_index(w))
        if k == W.KIND_REF:
            raise KernelError(
                f"quoted reference passed to non-control method '{spec.name}'")
        if k == W.KIND_VAR:
            raise KernelError("unsubstituted lambda variable reached a kernel")
        raise KernelError(f"word kind {k} is not a kernel value")


class _Worker(threading.Thread):
    """One event loop serving one or more tiles (round-robin multiplexing)."""

    def __init__(self, machine, index):
        super().__init__(name=f"gprm-worker-{index}", daemon=True)
        self.machine = machine
        self.queue = queue.SimpleQueue()
        self.busy = False
        self.fuzz = machine.fuzz_seed is not None
        self.rng = random.Random(None if machine.fuzz_seed is None
                                 else machine.fuzz_seed + 104729 * index)

    def run(self):
        machine = self.machine
        while True:
            pkt = self.queue.get()
            if pkt is _STOP:
                return
            self.busy = True
            try:
                if machine._fatal is None:
                    if self.fuzz and self.rng.random() < 0.25:
                        time.sleep(self.rng.random() * 1e-4)
                    machine.tiles[pkt.dst].handle(pkt)
            except Exception as e:  # engine invariant broken: poison the machine
                machine.set_fatal(e)
            finally:
                self.busy = False
                machine._processed += 1


class Machine:
    """A booted reduction machine; reusable across run() calls."""

    def __init__(self, image, registry, threads=None, *, trace=False,
                 fuzz_seed=None, capacity=1024, overload="grow"):
        if threads is None:
            threads = image.tile_count
        if threads < 1:
            raise VmError("thread count must be >= 1 (no tile to host the root)")
        if not 1 <= image.tile_count <= MAX_TILES:
            raise VmError(f"tile count must be in 1..{MAX_TILES}")
        if overload not in ("grow", "block"):
            raise VmError("overload policy must be 'grow' or 'block'")
        for (sid, mid), name in image.symbols.items():
            try:
                rsid, rmid, _ = registry.resolve(name)
            except KernelError as e:
                raise VmError(f"image/registry symbol mismatch: {e}") from None
            if (rsid, rmid) != (sid, mid):
                raise VmError(
                    f"image/registry symbol mismatch: '{name}' is "
                    f"{rsid}.{rmid} in the registry, {sid}.{mid} in the image")
        self.image = image
        self.registry = registry
        self.capacity = capacity
        self.overload = overload
        self.fuzz_seed = fuzz_seed
        self.tile_count = image.tile_count
        self.gateway_tile = image.tile_count
        self.code = dict(image.code)
        self.host_args = ()
        self._data = []
        self._handles = []
        self._handle_ids = {}
        self._handle_lock = threading.Lock()
        self._shared = {}
        self._shared_lock = threading.RLock()
        self._fatal = None
        self._processed = 0
        self._sent = 0
        self._running = threading.Lock()
        self._gateway = queue.SimpleQueue()
        self._trace = [] if trace else None
        self._trace_lock = threading.Lock()
        self.tiles = [Tile(self, t) for t in range(self.tile_count)]
        nworkers = min(threads, self.tile_count)
        self.workers = [_Worker(self, i) for i in range(nworkers)]
        self._worker_of = [self.workers[t % nworkers] for t in range(self.tile_count)]
        self._closed = False
        for w in self.workers:
            w.start()

    # ── host-side data and handles ───────────────────────────

    def register_data(self, obj):
        """Pre-register a host object for ctrl.reg; returns its index."""
        self._data.append(obj)
        self.wrap_handle(obj)  # stable handle index before the run starts
        return len(self._data) - 1

    def wrap_handle(self, obj):
        with self._handle_lock:
            idx = self._handle_ids.get(id(obj))
            if idx is None:
                idx = len(self._handles)
                self._handles.append(obj)
                self._handle_ids[id(obj)] = idx
            return idx

    def handle_object(self, idx):
        return self._handles[idx]

    def shared_state(self, name):
        with self._shared_lock:
            return self._shared.setdefault(name, {})

    def wrap_value(self, v):
        if v is None:
            return W.mk_const(0)
        if isinstance(v, bool):
            return W.mk_const(int(v))
        try:
            i = operator.index(v)  # int and numpy integers
        except TypeError:
            return W.mk_handle(self.wrap_handle(v))
        try:
            return W.mk_const(i)
        except ValueError:
            raise KernelError(f"kernel returned out-of-range integer {i}") from None

    def decode_word(self, w):
        """Result word -> host value (lists materialized)."""
        k = W.kind_of(w)
        if k == W.KIND_CONST:
            return W.const_value(w)
        if k == W.KIND_HANDLE:
            obj = self.handle_object(W.handle_index(w))
            return materialize(obj) if is_list(obj) else obj
        if k == W.KIND_REF:
            return LAMBDA_VALUE
        if k == W.KIND_ERROR:
            info = self.handle_object(W.handle_index(w))
            raise TaskError(info.message, info.frames)
        raise VmError(f"cannot decode word kind {k}")

    # ── packet plumbing ──────────────────────────────────────

    def send(self, kind, src, dst, caller, payload):
        pkt = Packet(kind, src, dst, caller[0], caller[1], caller[2], tuple(payload))
        if self._trace is not None:
            with self._trace_lock:
                self._trace.append((len(self._trace), pkt))
        self._sent += 1
        if dst == self.gateway_tile:
            self._gateway.put(pkt)
        else:
            self._enqueue(pkt)

    def _enqueue(self, pkt):
        self._worker_of[pkt.dst].queue.put(pkt)

    def restart_evaluation(self, ref_word, tile_id, caller, src=0):
        if W.kind_of(ref_word) != W.KIND_REF or not W.is_quoted(ref_word):
            raise KernelError("restart requires a quoted reference")
        tile = tile_id % self.tile_count  # out-of-range thread ids wrap
        w = W.clear_quote(W.ref_with_tile(ref_word, tile))
        self.send(REQ, src, tile, caller, (w,))

    def set_fatal(self, exc):
        if self._fatal is None:
            self._fatal = exc

    # ── running ──────────────────────────────────────────────

    def run(self, host_args=(), timeout=60.0):
        """Evaluate the program root; blocks until its result reaches the host.

        Returns the result payload words.  Raises TaskError for kernel or
        reduction errors, StuckReductionError if the machine quiesces without
        an answer."""
        if self._closed:
            raise VmError("machine is shut down")
        if self._fatal is not None:
            raise self._fatal
        if not self._running.acquire(blocking=False):
            raise VmError("run() is not reentrant; one evaluation at a time")
        try:
            self.host_args = tuple(host_args)
            for t in self.tiles:
                t.arena.clear()
                t.arena_next = 0
            root = self.image.root
            deadline = time.monotonic() + timeout
            self.send(REQ, self.gateway_tile, W.ref_tile(root),
                      (self.gateway_tile, 0, 0), (root,))
            pkt = self._await_result(deadline)
            self._quiesce(deadline)
            self.check_conservation()
        finally:
            self._running.release()
        words = pkt.payload
        if words and W.kind_of(words[0]) == W.KIND_ERROR:
            info = self.handle_object(W.handle_index(words[0]))
            raise TaskError(info.message, info.frames)
        return words

    def run_value(self, host_args=(), timeout=60.0):
        words = self.run(host_args, timeout)
        return self.decode_word(words[0])

    def _await_result(self, deadline):
        stable = 0
        while True:
            try:
                return self._gateway.get(timeout=0.02)
            except queue.Empty:
                pass
            if self._fatal is not None:
                raise self._fatal
            if time.monotonic() > deadline:
                raise StuckReductionError("stuck reduction: timed out")
            if self._looks_idle():
                stable += 1
                if stable >= 3:
                    raise StuckReductionError(
                        "stuck reduction: all FIFOs empty, no pending root")
            else:
                stable = 0

    def _looks_idle(self):
        before = self._sent + self._processed
        if any(not w.queue.empty() or w.busy for w in self.workers):
            return False
        time.sleep(0.005)
        if any(not w.queue.empty() or w.busy for w in self.workers):
            return False
        return self._sent + self._processed == before

    def _quiesce(self, deadline):
        # the root result can overtake the sender's own cleanup by a hair
        while not self._looks_idle():
            if self._fatal is not None:
                raise self._fatal
            if time.monotonic() > deadline:
                raise StuckReductionError("machine did not quiesce after the result")

    def check_conservation(self):
        """Quiescence hook: no leaked records, no queued packets."""
        for t in self.tiles:
            if len(t.subtask_stack) != len(t.subtask_list):
                raise ResourceLeakError(
                    f"tile {t.tile_id} leaked "
                    f"{len(t.subtask_list) - len(t.subtask_stack)} subtask records")
        if any(not w.queue.empty() for w in self.workers):
            raise ResourceLeakError("packets left in FIFOs after the run")

    # ── introspection ────────────────────────────────────────

    def code_words(self, addr):
        if addr < RUNTIME_BASE:
            return self.code[addr]
        return self.tiles[(addr - RUNTIME_BASE) // RUNTIME_STRIDE].arena[addr]

    def trace_packets(self):
        if self._trace is None:
            raise VmError("machine was booted without trace=True")
        return [pkt for _, pkt in self._trace]

    def write_trace(self, path):
        with open(path, "w") as f:
            for seq, pkt in self._trace or []:
                payload = ",".join(f"{w:016x}" for w in pkt.payload)
                f.write(f"{seq} {_KIND_NAMES[pkt.kind]} {pkt.src} {pkt.dst} "
                        f"{pkt.caller_addr} {pkt.caller_arg} {payload}\n")

    def clear_trace(self):
        if self._trace is not None:
            self._trace.clear()

    # ── lifecycle ────────────────────────────────────────────

    def shutdown(self):
        if self._closed:
            return
        self._closed = True
        for w in self.workers:
            w.queue.put(_STOP)
        for w in self.workers:
            w.join(timeout=5.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
        return False


def boot(image, registry, thread_count=None, **kw):
    """Create the thread pool and load the code store; tiles block on FIFOs."""
    return Machine(image, registry, thread_count, **kw)
