"""Mini single-assignment front-end: C-like task composition code -> GPIR.

Surface grammar (a deliberately tiny slice of the C++-flavoured composition
language; task kernels themselves are ordinary host code)::

    GPRM::Kernel::MergeSort ms;          // kernel instance declaration
    void ms_rec(int n, int nmax, int* a) { ... }
    int GPRM::compute(int v0) { ... }    // qualified name marks the entry

    stmt: int v = expr;  |  v = expr;  |  if (e) {...} else {...}
          |  return expr;  |  svc.method(args);
    expr: calls, variables, integer literals, + - * and comparisons

Rules: every variable is assigned exactly once; no loops (recursion only);
`if` sits in tail position.  A variable consumed by two or more later
expressions becomes a lambda-bound name applied via beta (so its producer
runs once); single-use variables are inlined.  Entry `int` parameters read
from `ctrl.arg`, pointer parameters from `ctrl.reg`.  Recursive helpers
compile to the self-application pattern `(beta F F args...)`.  `ctrl.run` is
available as an intrinsic whose first argument is compiled quoted (it is a
control method, receiving code rather than a value).
"""

from __future__ import annotations

import re

from . import lang
from .lang import ConstInt, Operation, Quoted, SExpr, Var


class GpcError(Exception):
    pass


_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+|//[^\n]*)
      | (?P<num>\d+)
      | (?P<name>[A-Za-z_]\w*)
      | (?P<op>::|>=|<=|==|!=|[><=+\-*/.,;(){}])
    """,
    re.VERBOSE,
)

_LOOP_WORDS = {"for", "while", "do"}


def _lex(src):
    out, pos = [], 0
    line = 1
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if not m:
            raise GpcError(f"bad character {src[pos]!r} at line {line}")
        line += src[pos : m.end()].count("\n")
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        out.append((m.lastgroup, m.group(), line))
    out.append(("eof", "", line))
    return out


class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        kind, val, line = self.next()
        if val != text:
            raise GpcError(f"expected '{text}', got '{val}' (line {line})")
        return val

    def at(self, text):
        return self.peek()[1] == text

    # ── top level ────────────────────────────────────────────

    def program(self):
        decls, funcs = {}, []
        while not self.at(""):
            save = self.i
            if self.try_decl(decls):
                continue
            self.i = save
            funcs.append(self.function())
        if not funcs:
            raise GpcError("no function definitions")
        return decls, funcs

    def try_decl(self, decls):
        """`[GPRM::Kernel::]ClassName instance;`"""
        kind, val, _ = self.peek()
        if kind != "name":
            return False
        j = self.i
        parts = [self.toks[j][1]]
        j += 1
        while self.toks[j][1] == "::":
            j += 1
            if self.toks[j][0] != "name":
                return False
            parts.append(self.toks[j][1])
            j += 1
        if parts and parts[0] in ("int", "void"):
            return False
        if self.toks[j][0] == "name" and self.toks[j + 1][1] == ";":
            alias = self.toks[j][1]
            if alias in decls:
                raise GpcError(f"kernel instance '{alias}' declared twice")
            decls[alias] = parts[-1]
            self.i = j + 2
            return True
        return False

    def function(self):
        kind, rtype, line = self.next()
        if rtype not in ("int", "void"):
            raise GpcError(f"expected a function definition at line {line}")
        while self.at("*"):
            self.next()
        kind, name, line = self.next()
        if kind != "name":
            raise GpcError(f"expected function name at line {line}")
        qualified = False
        while self.at("::"):
            self.next()
            qualified = True
            kind, name, line = self.next()
        self.expect("(")
        params = []
        while not self.at(")"):
            if params:
                self.expect(",")
            ptype = self.next()[1]
            if ptype != "int":
                raise GpcError(f"unsupported parameter type '{ptype}'")
            is_ptr = False
            if self.at("*"):
                self.next()
                is_ptr = True
            pname = self.next()[1]
            params.append((pname, is_ptr))
        self.expect(")")
        body = self.block()
        return {"name": name, "qualified": qualified, "params": params, "body": body}

    def block(self):
        self.expect("{")
        stmts = []
        while not self.at("}"):
            stmts.append(self.statement())
        self.expect("}")
        return stmts

    def statement(self):
        kind, val, line = self.peek()
        if val in _LOOP_WORDS:
            raise GpcError(f"'{val}' is not supported: use recursion (line {line})")
        if val == "if":
            self.next()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            then = self.block()
            self.expect("else")
            other = self.block()
            return ("if", cond, then, other)
        if val == "return":
            self.next()
            e = self.expr()
            self.expect(";")
            return ("return", e)
        if val == "int":
            self.next()
            while self.at("*"):
                self.next()
            name = self.next()[1]
            self.expect("=")
            e = self.expr()
            self.expect(";")
            return ("def", name, e)
        if kind == "name" and self.peek(1)[1] == "=":
            name = self.next()[1]
            self.next()
            e = self.expr()
            self.expect(";")
            return ("def", name, e)
        e = self.expr()
        self.expect(";")
        return ("expr", e)

    # ── expressions ──────────────────────────────────────────

    _CMP = (">=", "<=", "==", "!=", ">", "<")

    def expr(self):
        left = self.additive()
        if self.peek()[1] in self._CMP:
            op = self.next()[1]
            right = self.additive()
            return ("bin", op, left, right)
        return left

    def additive(self):
        left = self.multiplicative()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            left = ("bin", op, left, self.multiplicative())
        return left

    def multiplicative(self):
        left = self.primary()
        while self.at("*"):
            self.next()
            left = ("bin", "*", left, self.primary())
        return left

    def primary(self):
        kind, val, line = self.next()
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if val == "-" and self.peek()[0] == "num":
            return ("int", -int(self.next()[1]))
        if kind == "num":
            return ("int", int(val))
        if kind == "name":
            if val in _LOOP_WORDS:
                raise GpcError(f"'{val}' is not supported: use recursion (line {line})")
            if self.at("."):
                self.next()
                method = self.next()[1]
                return ("call", f"{val}.{method}", self.call_args())
            if self.at("("):
                return ("call", val, self.call_args())
            return ("var", val)
        raise GpcError(f"unexpected token '{val}' at line {line}")

    def call_args(self):
        self.expect("(")
        args = []
        while not self.at(")"):
            if args:
                self.expect(",")
            args.append(self.expr())
        self.expect(")")
        return args


# ── AST helpers (shadow-aware, over lang nodes) ──────────────────────


def _count_uses(e, name):
    if isinstance(e, Var):
        return int(e.name == name)
    if isinstance(e, Quoted):
        return _count_uses(e.inner, name)
    if isinstance(e, SExpr):
        if e.op.name == lang.FORM_LAMBDA:
            if any(f.inner.name == name for f in e.args[:-1]):
                return 0
            return _count_uses(e.args[-1], name)
        return sum(_count_uses(a, name) for a in e.args)
    return 0


def _subst_names(e, env):
    if not env:
        return e
    if isinstance(e, Var):
        return env.get(e.name, e)
    if isinstance(e, Quoted):
        return Quoted(_subst_names(e.inner, env))
    if isinstance(e, SExpr):
        if e.op.name == lang.FORM_LAMBDA:
            shadowed = {f.inner.name for f in e.args[:-1]}
            inner_env = {k: v for k, v in env.items() if k not in shadowed}
            return SExpr(e.op, e.args[:-1] + (_subst_names(e.args[-1], inner_env),))
        return SExpr(e.op, tuple(_subst_names(a, env) for a in e.args))
    return e


def _calls_in(stmts, out):
    for s in stmts:
        if s[0] == "if":
            _expr_calls(s[1], out)
            _calls_in(s[2], out)
            _calls_in(s[3], out)
        else:
            _expr_calls(s[-1], out)


def _expr_calls(e, out):
    if e[0] == "call":
        out.add(e[1])
        for a in e[2]:
            _expr_calls(a, out)
    elif e[0] == "bin":
        _expr_calls(e[2], out)
        _expr_calls(e[3], out)


# ── Code generation ──────────────────────────────────────────────────


class _Compiler:
    def __init__(self, decls, funcs, num_threads):
        self.decls = decls
        self.funcs = {f["name"]: f for f in funcs}
        self.num_threads = num_threads
        self.recursive = set()
        self._mark_recursion(funcs)

    def _mark_recursion(self, funcs):
        graph = {}
        for f in funcs:
            called = set()
            _calls_in(f["body"], called)
            graph[f["name"]] = {c for c in called if c in self.funcs}
        for name, callees in graph.items():
            if name in callees:
                self.recursive.add(name)
        state = {}

        def visit(n, stack):
            if n in state:
                return
            if n in stack:
                cycle = stack[stack.index(n):]
                if len(cycle) > 1:
                    raise GpcError(f"mutual recursion is not supported: {' -> '.join(cycle + [n])}")
                return
            for c in graph.get(n, ()):
                if c != n:
                    visit(c, stack + [n])
            state[n] = True

        for n in graph:
            visit(n, [])

    def entry_function(self):
        qualified = [f for f in self.funcs.values() if f["qualified"]]
        if len(qualified) > 1:
            raise GpcError("more than one qualified entry function")
        if qualified:
            return qualified[0]
        return list(self.funcs.values())[-1]

    def compile(self):
        entry = self.entry_function()
        env = {}
        n_int = n_ptr = 0
        for pname, is_ptr in entry["params"]:
            if is_ptr:
                env[pname] = SExpr(Operation("ctrl.reg"), (Quoted(ConstInt(n_ptr)),))
                n_ptr += 1
            else:
                env[pname] = SExpr(Operation("ctrl.arg"), (Quoted(ConstInt(n_int)),))
                n_int += 1
        return self.gen_block(entry["body"], env, entry["name"])

    # env: variable name -> lang AST to substitute for it
    def gen_block(self, stmts, env, fname):
        defs = []       # (name, ast) in assignment order
        bare = []       # effect statements whose values are discarded
        tail = None
        local = dict(env)
        for idx, s in enumerate(stmts):
            last = idx == len(stmts) - 1
            if s[0] == "def":
                name = s[1]
                if name in local:
                    raise GpcError(f"variable '{name}' reassigned (single assignment)")
                ast = self.gen_expr(s[2], local, fname)
                local[name] = Var(name)
                defs.append((name, ast))
            elif s[0] == "return":
                if not last:
                    raise GpcError("statements after return")
                tail = self.gen_expr(s[1], local, fname)
            elif s[0] == "if":
                if not last:
                    raise GpcError("if must be the last statement in a block")
                cond = self.gen_expr(s[1], local, fname)
                then = self.gen_block(s[2], local, fname)
                other = self.gen_block(s[3], local, fname)
                tail = SExpr(Operation(lang.FORM_IF), (cond, lang.quote(then), lang.quote(other)))
            else:  # bare expression statement
                ast = self.gen_expr(s[1], local, fname)
                if last:
                    tail = ast
                else:
                    bare.append(ast)
        if tail is None:
            raise GpcError(f"function '{fname}' has no result statement")
        return self._wrap_defs(defs, bare, tail)

    def _wrap_defs(self, defs, bare, tail):
        # usage counts over everything downstream of each definition
        later = {}
        for i, (name, _) in enumerate(defs):
            n = sum(_count_uses(a, name) for _, a in defs[i + 1:])
            n += sum(_count_uses(b, name) for b in bare)
            n += _count_uses(tail, name)
            later[name] = n
        inline = {}
        groups = []  # list of [(name, ast)] bound together (independent defs)
        for name, ast in defs:
            ast = _subst_names(ast, inline)
            if later[name] == 0:
                raise GpcError(f"unused variable '{name}'")
            if later[name] == 1:
                inline[name] = ast
                continue
            if groups and any(_count_uses(ast, gname) for gname, _ in groups[-1]):
                groups.append([(name, ast)])  # depends on current group: new layer
            elif groups:
                groups[-1].append((name, ast))
            else:
                groups.append([(name, ast)])
        core = _subst_names(tail, inline)
        bare = [_subst_names(b, inline) for b in bare]
        if bare:
            core = SExpr(Operation("begin"), tuple(bare) + (core,))
        for group in reversed(groups):
            formals = tuple(Quoted(Var(n)) for n, _ in group)
            lam = SExpr(Operation(lang.FORM_LAMBDA), formals + (lang.quote(core),))
            core = SExpr(Operation(lang.FORM_BETA), (lam,) + tuple(a for _, a in group))
        return core

    def gen_expr(self, e, env, fname):
        kind = e[0]
        if kind == "int":
            return Quoted(ConstInt(e[1]))
        if kind == "var":
            name = e[1]
            if name == "NUM_THREADS":
                if self.num_threads is None:
                    raise GpcError("NUM_THREADS used but no thread count was given")
                return Quoted(ConstInt(self.num_threads))
            if name not in env:
                raise GpcError(f"use of unassigned variable '{name}'")
            return env[name]
        if kind == "bin":
            return SExpr(Operation(e[1]),
                         (self.gen_expr(e[2], env, fname), self.gen_expr(e[3], env, fname)))
        op, args = e[1], e[2]
        if "." in op:
            svc = op.split(".", 1)[0]
            if svc != "ctrl" and svc not in self.decls:
                raise GpcError(f"undeclared kernel instance '{svc}'")
            gen_args = [self.gen_expr(a, env, fname) for a in args]
            if op == "ctrl.run":
                if len(args) != 2 or args[0][0] != "call":
                    raise GpcError("ctrl.run expects a call and a thread id")
                gen_args[0] = lang.quote(gen_args[0])  # control method: defer the code
            return SExpr(Operation(op), tuple(gen_args))
        if op in self.funcs:
            return self.gen_helper_call(op, args, env, fname)
        raise GpcError(f"call to undefined function '{op}'")

    def gen_helper_call(self, name, args, env, fname):
        func = self.funcs[name]
        if len(args) != len(func["params"]):
            raise GpcError(f"'{name}' expects {len(func['params'])} arguments, got {len(args)}")
        gen_args = tuple(self.gen_expr(a, env, fname) for a in args)
        if name == fname:
            # recursive call inside the helper's own body: apply the bound
            # self-reference to itself
            f = env[name]
            return SExpr(Operation(lang.FORM_BETA), (f, f) + gen_args)
        lam = self.helper_lambda(name)
        if name in self.recursive:
            # (beta (lambda 'f 'params '(beta f f params)) F args...)
            params = [p for p, _ in func["params"]]
            formals = tuple(Quoted(Var(n)) for n in [name] + params)
            seed = SExpr(Operation(lang.FORM_BETA),
                         (Var(name), Var(name)) + tuple(Var(p) for p in params))
            wrapper = SExpr(Operation(lang.FORM_LAMBDA), formals + (Quoted(seed),))
            return SExpr(Operation(lang.FORM_BETA), (wrapper, lam) + gen_args)
        return SExpr(Operation(lang.FORM_BETA), (lam,) + gen_args)

    def helper_lambda(self, name):
        func = self.funcs[name]
        params = [p for p, _ in func["params"]]
        recursive = name in self.recursive
        env = {p: Var(p) for p in params}
        if recursive:
            if name in params:
                raise GpcError(f"'{name}' shadows one of its parameters")
            env[name] = Var(name)
        body = self.gen_block(func["body"], env, name)
        formals = ([Quoted(Var(name))] if recursive else []) + [Quoted(Var(p)) for p in params]
        return SExpr(Operation(lang.FORM_LAMBDA), tuple(formals) + (lang.quote(body),))


def compile_gpc(source, num_threads=None):
    """Compile mini task-composition source to GPIR text.

    The entry point is the GPRM::-qualified function (or, failing that, the
    last function defined); `num_threads` substitutes the NUM_THREADS
    constant when the source refers to it."""
    decls, funcs = _Parser(_lex(source)).program()
    ast = _Compiler(decls, funcs, num_threads).compile()
    return lang.to_text(ast)
