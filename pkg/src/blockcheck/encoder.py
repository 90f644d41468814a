"""SMT-LIB encoding of lowered models.

Each element of the subsystem tree becomes a pair of Boolean functions,
``init_<path>`` over its state variables and ``trans_<path>`` over a step
counter, pre/post states, inputs, outputs and the port variables of its
children (passed as extra parameters so the scripts stay quantifier free).
Conditionally executed elements get a wrapper ``trans_<path>`` around a
``trans_<path>.body``.

Two encodings share one command skeleton:

* ``approx``: floats as Real, machine integers as unbounded Int;
* ``exact``: floats as FloatingPoint (RNE), integers as bit-vectors.
"""

from __future__ import annotations

from fractions import Fraction

from . import floats
from . import smtlib as S
from .core import DataType, ModelError, dtype_flatten
from .ir import Node, Program, SubsystemIR, hold_state, walk_nodes
from .smtlib import Term, app

APPROX, EXACT = "approx", "exact"
MODES = (APPROX, EXACT)

CURR_STEP = "curr_step"
FLAG_KIND = "flag_kind"

_RM = {"floor": "RTN", "ceil": "RTP", "zero": "RTZ", "nearest": "RNE"}


class EncodingError(ModelError):
    pass


def fun_name(e: SubsystemIR, kind: str) -> str:
    return f"{kind}_{e.name or 'root'}"


def _sim_mode(mode: str) -> str:
    return "machine" if mode == EXACT else "ideal"


def sort_of(t: DataType, mode: str) -> S.Sort:
    if t.is_bus:
        return S.usort(t.bus_name)
    if t.dims:
        raise EncodingError(f"non-scalar type {t} reached the encoder")
    if t.is_bool:
        return S.BOOL
    if t.base == "integer":
        return S.INT
    if t.base == "real":
        return S.REAL
    if mode == APPROX:
        return S.REAL if t.is_float else S.INT
    if t.is_float:
        return S.float_sort(t.base)
    return S.bitvec(t.bits)


def value_to_term(v, t: DataType, mode: str) -> Term:
    """Literal for a simulator value of scalar type ``t``."""
    return S.value_term(v, sort_of(t, mode))


class Helpers:
    """Auxiliary function definitions, emitted only when referenced."""

    def __init__(self, mode: str):
        self.mode = mode
        self.defs: dict[str, S.Command] = {}

    def call(self, name: str, *args: Term) -> Term:
        return S.fun_of(self.defs[name])(*args)

    def _add(self, name, params, sort, body):
        if name not in self.defs:
            self.defs[name] = S.define_fun(name, params, sort, body)
        return name

    def commands(self) -> list[S.Command]:
        return list(self.defs.values())

    # -- generic --------------------------------------------------------------

    def saturate(self, t: DataType, ops: "Ops") -> str:
        srt = sort_of(t, self.mode)
        if self.mode == APPROX:
            name = "saturate" if srt == S.REAL else "saturate.int"
        else:
            name = f"{t.base}.saturate"
        if name not in self.defs:
            hi, lo, x = S.sym("hi", srt), S.sym("lo", srt), S.sym("x", srt)
            body = app("ite", ops.cmp("le", x, hi, t), app("ite", ops.cmp("ge", x, lo, t), x, lo), hi)
            self._add(name, [("hi", srt), ("lo", srt), ("x", srt)], srt, body)
        return name

    def int_div(self) -> str:
        a, b = S.sym("a", S.INT), S.sym("b", S.INT)
        q = app("div", app("abs", a), app("abs", b))
        zero = S.int_lit(0)
        body = app("ite", app("=", app(">=", a, zero), app(">=", b, zero)), q, app("-", q))
        return self._add("int.div", [("a", S.INT), ("b", S.INT)], S.INT, body)

    def round_even(self) -> str:
        x = S.sym("x", S.REAL)
        f = S.sym("f", S.INT)
        half = S.real_lit(Fraction(1, 2))
        r = app("-", x, app("to_real", f))
        one = S.int_lit(1)
        even = app("=", app("mod", f, S.int_lit(2)), S.int_lit(0))
        inner = app("ite", app("<", r, half), f,
                    app("ite", app(">", r, half), app("+", f, one), app("ite", even, f, app("+", f, one))))
        body = S.let([("f", app("to_int", x))], inner)
        return self._add("real.round_even", [("x", S.REAL)], S.INT, body)

    # -- exact integers -----------------------------------------------------------

    def int_op(self, op: str, t: DataType, sat: bool) -> str:
        name = f"{t.base}.{op}" + ("_sat" if sat else "")
        if name in self.defs:
            return name
        n = t.bits
        srt = S.bitvec(n)
        a, b = S.sym("a", srt), S.sym("b", srt)
        unary = op in ("neg", "abs")
        params = [("a", srt)] if unary else [("a", srt), ("b", srt)]
        if not sat:
            if op == "abs":
                body = app("ite", app("bvslt", a, S.bv_lit(0, n)), app("bvneg", a), a) if t.signed else a
            elif op == "neg":
                body = app("bvneg", a)
            elif op == "div":
                body = app("bvsdiv" if t.signed else "bvudiv", a, b)
            else:
                body = app({"add": "bvadd", "sub": "bvsub", "mul": "bvmul"}[op], a, b)
            return self._add(name, params, srt, body)
        w = 2 * n + 2
        ext = "sign_extend" if t.signed else "zero_extend"
        wa = app(ext, a, indices=(w - n,))
        wb = app(ext, b, indices=(w - n,))
        if op == "abs":
            r = app("ite", app("bvslt", wa, S.bv_lit(0, w)), app("bvneg", wa), wa)
        elif op == "neg":
            r = app("bvneg", wa)
        elif op == "div":
            r = app("bvsdiv", wa, wb)
        else:
            r = app({"add": "bvadd", "sub": "bvsub", "mul": "bvmul"}[op], wa, wb)
        body = S.let([("r", r)], _clamp_wide(S.sym("r", S.bitvec(w)), t, w))
        return self._add(name, params, srt, body)

    def float_to_int(self, src: DataType, dst: DataType, rounding: str, sat: bool) -> str:
        name = f"{src.base}.to_{dst.base}.{rounding}" + ("_sat" if sat else "")
        if name in self.defs:
            return name
        f = floats.fmt_of(src.base)
        fs = S.float_sort(src.base)
        n = dst.bits
        w = n + f.sb + 1
        x = S.sym("x", fs)
        r = S.sym("r", fs)
        bound = S.fp_lit(floats.round_fraction(Fraction(2) ** (w - 1), src.base))
        conv = app("extract", app("fp.to_sbv", S.rm("RTZ"), r, indices=(w,)), indices=(n - 1, 0))
        body = app("ite", app("fp.lt", app("fp.abs", r), bound), conv, S.bv_lit(0, n))
        if sat:
            lo, hi = dst.int_range
            body = app("ite", _fp_cmpc(r, "<=", Fraction(lo), src.base), S.bv_lit(lo, n),
                       app("ite", _fp_cmpc(r, ">=", Fraction(hi), src.base), S.bv_lit(hi, n), body))
        body = S.let([("r", app("fp.roundToIntegral", S.rm(_RM[rounding]), x))], body)
        return self._add(name, [("x", fs)], S.bitvec(n), body)


def _clamp_wide(r: Term, t: DataType, w: int) -> Term:
    lo, hi = t.int_range
    n = t.bits
    low = app("extract", r, indices=(n - 1, 0))
    return app("ite", app("bvslt", r, S.bv_lit(lo, w)), S.bv_lit(lo, n),
               app("ite", app("bvsgt", r, S.bv_lit(hi, w)), S.bv_lit(hi, n), low))


def _fp_cmpc(x: Term, op: str, r: Fraction, prec: str) -> Term:
    """Exact comparison of a float term with a rational via its neighbours."""
    lo, hi = floats.rational_neighbours(r, prec)
    if lo == hi:
        k = S.fp_lit(lo)
        if op == "!=":
            return app("not", app("fp.eq", x, k))
        return app({"<": "fp.lt", "<=": "fp.leq", ">": "fp.gt", ">=": "fp.geq", "==": "fp.eq"}[op], x, k)
    if op in ("<", "<="):
        return app("fp.leq", x, S.fp_lit(lo))
    if op in (">", ">="):
        return app("fp.geq", x, S.fp_lit(hi))
    return S.bool_lit(op == "!=")


def _floor(r: Fraction) -> int:
    return r.numerator // r.denominator


def _ceil(r: Fraction) -> int:
    return -((-r.numerator) // r.denominator)


class Ops:
    """Node -> Term translation for one mode."""

    def __init__(self, mode: str, helpers: Helpers, bus_types: dict):
        from .simulator import Evaluator

        self.mode = mode
        self.h = helpers
        self.buses = bus_types
        self.ev = Evaluator(_sim_mode(mode))

    def sort(self, t: DataType) -> S.Sort:
        return sort_of(t, self.mode)

    # -- comparisons --------------------------------------------------------------

    def cmp(self, op: str, a: Term, b: Term, t: DataType) -> Term:
        srt = a.sort
        if srt == S.BOOL:
            return {
                "eq": lambda: app("=", a, b),
                "ne": lambda: app("not", app("=", a, b)),
                "lt": lambda: app("and", app("not", a), b),
                "le": lambda: app("=>", a, b),
                "gt": lambda: app("and", a, app("not", b)),
                "ge": lambda: app("=>", b, a),
            }[op]()
        if srt.kind == "Float":
            if op == "ne":
                return app("not", app("fp.eq", a, b))
            return app({"lt": "fp.lt", "le": "fp.leq", "gt": "fp.gt", "ge": "fp.geq", "eq": "fp.eq"}[op], a, b)
        if srt.kind == "BitVec":
            if op == "eq":
                return app("=", a, b)
            if op == "ne":
                return app("not", app("=", a, b))
            pre = "bvs" if t.signed else "bvu"
            return app(pre + {"lt": "lt", "le": "le", "gt": "gt", "ge": "ge"}[op], a, b)
        if op == "eq":
            return app("=", a, b)
        if op == "ne":
            return app("not", app("=", a, b))
        return app({"lt": "<", "le": "<=", "gt": ">", "ge": ">="}[op], a, b)

    def cmpc(self, x: Term, t: DataType, op: str, r: Fraction) -> Term:
        srt = x.sort
        if srt == S.BOOL:
            when_true = floats._apply_cmp((1 > r) - (1 < r), op)
            when_false = floats._apply_cmp((0 > r) - (0 < r), op)
            if when_true and when_false:
                return S.TRUE
            if when_true:
                return x
            if when_false:
                return app("not", x)
            return S.FALSE
        if srt.kind == "Float":
            return _fp_cmpc(x, op, r, srt.precision)
        if srt == S.REAL:
            k = S.real_lit(r)
            if op == "!=":
                return app("not", app("=", x, k))
            return app({"==": "="}.get(op, op), x, k)
        # integers (Int or BitVec)
        if srt == S.INT:
            lo = hi = None
        else:
            lo, hi = t.int_range

        def lit(m):
            return S.int_lit(m) if srt == S.INT else S.bv_lit(m, srt.width)

        def le(m):
            if hi is not None and m >= hi:
                return S.TRUE
            if lo is not None and m < lo:
                return S.FALSE
            return app("<=", x, lit(m)) if srt == S.INT else app("bvsle" if t.signed else "bvule", x, lit(m))

        def ge(m):
            if lo is not None and m <= lo:
                return S.TRUE
            if hi is not None and m > hi:
                return S.FALSE
            return app(">=", x, lit(m)) if srt == S.INT else app("bvsge" if t.signed else "bvuge", x, lit(m))

        def eq(m):
            if r.denominator != 1 or (lo is not None and not lo <= m <= hi):
                return S.FALSE
            return app("=", x, lit(m))

        if op == "<":
            return le(_ceil(r) - 1)
        if op == "<=":
            return le(_floor(r))
        if op == ">":
            return ge(_floor(r) + 1)
        if op == ">=":
            return ge(_ceil(r))
        if op == "==":
            return eq(int(r))
        return S.not_(eq(int(r)))

    # -- expressions --------------------------------------------------------------

    def const(self, n: Node) -> Term:
        return value_to_term(self.ev.const(n), n.type, self.mode)

    def term(self, n: Node, env) -> Term:
        op = n.op
        t = n.type
        if op in ("var", "state"):
            return env(op, n.attr)
        if op == "const":
            return self.const(n)
        args = [self.term(a, env) for a in n.args]
        if op in ("and", "or", "xor"):
            return app(op, *args)
        if op == "not":
            return S.not_(args[0])
        if op == "ite":
            return app("ite", *args)
        if op in ("lt", "le", "gt", "ge", "eq", "ne"):
            return self.cmp(op, args[0], args[1], n.args[0].type)
        if op == "cmpc":
            return self.cmpc(args[0], n.args[0].type, n.attr[0], n.attr[1])
        if op == "min":
            a, b = args
            return app("ite", self.cmp("lt", b, a, t), b, a)
        if op == "max":
            a, b = args
            return app("ite", self.cmp("lt", a, b, t), b, a)
        if op == "saturate":
            return self.h.call(self.h.saturate(t, self), *args)
        if op == "member":
            bt = n.args[0].type
            return self._accessor(bt.bus_name, n.attr)(args[0])
        if op == "lift":
            return self.lift(args[0], n.args[0].type)
        if op == "cast":
            return self.cast(args[0], n.args[0].type, t, *n.attr)
        if op in ("add", "sub", "mul", "div", "neg", "abs"):
            return self.arith(op, t, args, n.attr == "sat")
        raise EncodingError(f"no encoding for operator {op}")

    def _accessor(self, bus: str, leaf: str) -> S.FunDecl:
        types = dict(dtype_flatten(DataType("bus:" + bus), self.buses))
        if leaf not in types:
            raise EncodingError(f"bus {bus} has no member {leaf}")
        return S.FunDecl(f"{bus}_{leaf}", (S.usort(bus),), self.sort(types[leaf]))

    def accessors(self, bus: str):
        return [(leaf, self._accessor(bus, leaf)) for leaf, _ in dtype_flatten(DataType("bus:" + bus), self.buses)]

    def arith(self, op: str, t: DataType, args: list[Term], sat: bool) -> Term:
        srt = self.sort(t)
        if srt.kind == "Float":
            if op == "neg":
                return app("fp.neg", args[0])
            if op == "abs":
                return app("fp.abs", args[0])
            return app("fp." + op, S.rm("RNE"), *args)
        if srt.kind == "BitVec":
            return self.h.call(self.h.int_op(op, t, sat), *args)
        if op == "neg":
            return app("-", args[0])
        if op == "abs":
            if srt == S.INT:
                return app("abs", args[0])
            zero = S.real_lit(0)
            return app("ite", app(">=", args[0], zero), args[0], app("-", args[0]))
        if op == "div":
            if srt == S.INT:
                return self.h.call(self.h.int_div(), *args)
            return app("/", *args)
        return app({"add": "+", "sub": "-", "mul": "*"}[op], *args)

    def lift(self, x: Term, t: DataType) -> Term:
        srt = x.sort
        if srt == S.REAL:
            return x
        if srt == S.BOOL:
            return app("ite", x, S.real_lit(1), S.real_lit(0))
        if srt == S.INT:
            return app("to_real", x)
        if srt.kind == "Float":
            return app("fp.to_real", x)
        n = srt.width
        nat = app("bv2nat", x)
        if t.signed:
            nat = app("ite", app("bvslt", x, S.bv_lit(0, n)), app("-", nat, S.int_lit(1 << n)), nat)
        return app("to_real", nat)

    def cast(self, x: Term, src: DataType, dst: DataType, rounding: str, sat: bool) -> Term:
        ss, ds = x.sort, self.sort(dst)
        if ss == ds:
            if ss.kind == "BitVec" and sat and src.signed != dst.signed:
                return _int_to_int(x, src, dst, sat)
            return x
        if ds == S.BOOL:
            if ss.kind == "Float":
                return app("not", app("fp.isZero", x))
            zero = S.value_term(0, ss)
            return app("not", app("=", x, zero))
        if ss == S.BOOL:
            return app("ite", x, S.value_term(1, ds), S.value_term(0, ds))
        if self.mode == APPROX:
            if ds == ss:
                return x
            if ds == S.REAL:
                return app("to_real", x)
            # Real -> Int with rounding
            if rounding == "floor":
                return app("to_int", x)
            if rounding == "ceil":
                return app("-", app("to_int", app("-", x)))
            if rounding == "zero":
                return app("ite", app(">=", x, S.real_lit(0)), app("to_int", x), app("-", app("to_int", app("-", x))))
            return self.h.call(self.h.round_even(), x)
        # exact
        if ds.kind == "Float":
            if ss.kind == "Float":
                return app("to_fp", S.rm("RNE"), x, indices=(ds.eb, ds.sb))
            if ss.kind == "BitVec":
                return app("to_fp" if src.signed else "to_fp_unsigned", S.rm("RNE"), x, indices=(ds.eb, ds.sb))
            if ss == S.REAL:
                return app("to_fp", S.rm("RNE"), x, indices=(ds.eb, ds.sb))
        if ds.kind == "BitVec":
            if ss.kind == "Float":
                return self.h.call(self.h.float_to_int(src, dst, rounding, sat), x)
            if ss.kind == "BitVec":
                return _int_to_int(x, src, dst, sat)
            if ss == S.INT:
                # rate counters are small non-negative integers
                raise EncodingError("Int to bit-vector conversion is not supported")
        raise EncodingError(f"no conversion from {src} to {dst}")


def _int_to_int(x: Term, src: DataType, dst: DataType, sat: bool) -> Term:
    n, m = src.bits, dst.bits
    ext = "sign_extend" if src.signed else "zero_extend"
    if not sat:
        if m == n:
            return x
        if m < n:
            return app("extract", x, indices=(m - 1, 0))
        return app(ext, x, indices=(m - n,))
    w = max(n, m) + 1
    wide = app(ext, x, indices=(w - n,))
    return _clamp_wide(wide, dst, w)


# ---------------------------------------------------------------------------
# element definitions


class _Scope:
    """Name environment of one define-fun body."""

    def __init__(self, e: SubsystemIR, ops: Ops):
        self.e = e
        self.ops = ops
        self.params: list[tuple[str, S.Sort]] = []
        self.names: dict[tuple[str, str], Term] = {}  # (kind, global) -> term
        self.used: set[str] = set()

    def param(self, kind: str, glob: str, t: DataType, suffix: str = "") -> Term:
        name = self.e.rel(glob) + suffix
        if name in self.used:
            raise EncodingError(f"parameter name clash on {name} in {self.e.name or '<root>'}")
        self.used.add(name)
        s = S.sym(name, self.ops.sort(t))
        self.params.append((name, s.sort))
        self.names[(kind, glob)] = s
        return s

    def lookup(self, kind: str, glob: str) -> Term:
        key = ("state0" if kind == "state" else "var", glob)
        if key not in self.names:
            raise EncodingError(f"{glob} is not visible in {self.e.name or '<root>'}")
        return self.names[key]


def _step_param(names) -> str:
    c = "c"
    while c in names:
        c += "!"
    return c


class SystemEncoder:
    """Define-funs for every element of a program in one mode."""

    def __init__(self, prog: Program, mode: str):
        if mode not in MODES:
            raise ValueError(f"unknown encoding {mode!r}")
        self.prog = prog
        self.mode = mode
        self.helpers = Helpers(mode)
        self.ops = Ops(mode, self.helpers, prog.tm.bus_types)
        self.owner = tuple(prog.owner) if prog.prop is not None else None
        self.curr_step = S.sym(CURR_STEP, S.INT)
        self.flag_kind = S.sym(FLAG_KIND, S.BOOL)
        self.funs: dict[str, S.Command] = {}
        self._defs: list[S.Command] = []

    # -- public -------------------------------------------------------------------

    def system(self, top: SubsystemIR | None = None) -> list[S.Command]:
        """Declarations, helpers, bus sorts and define-funs for ``top``'s subtree."""
        top = top or self.prog.root
        self._defs = []
        self._element(top)
        cmds = [
            S.comment("Variable representing the current step."),
            S.declare_const(CURR_STEP, S.INT),
            S.comment("Whether to verify the induction step."),
            S.declare_const(FLAG_KIND, S.BOOL),
        ]
        buses = self._buses(top)
        if buses:
            cmds.append(S.comment("Bus sorts and member accessors."))
            for b in buses:
                cmds.append(S.declare_sort(b))
                for leaf, acc in self.ops.accessors(b):
                    cmds.append(S.declare_fun(acc.name, acc.params, acc.result))
        helpers = self.helpers.commands()
        if helpers:
            cmds.append(S.comment("Helper functions."))
            cmds.extend(helpers)
        return cmds + self._defs

    def top_fun(self, top: SubsystemIR) -> S.FunDecl:
        name = fun_name(top, "trans") + (".body" if top.activation is not None else "")
        return S.fun_of(self.funs[name])

    def init_fun(self, top: SubsystemIR) -> S.FunDecl:
        return S.fun_of(self.funs[fun_name(top, "init")])

    # -- bus sorts ----------------------------------------------------------------

    def _buses(self, top: SubsystemIR) -> list[str]:
        seen: list[str] = []

        def visit_type(t: DataType):
            if t.is_bus and t.bus_name not in seen:
                for _, mt in self.prog.tm.bus_types[t.bus_name]:
                    visit_type(mt)
                seen.append(t.bus_name)

        for e in top.walk():
            for v in e.inputs + e.outputs + e.own_aux:
                visit_type(v.type)
            for eq in e.equations:
                for node in ([eq.expr] if eq.expr is not None else list(eq.args)):
                    for x in walk_nodes(node):
                        visit_type(x.type)
                        if x.op == "member":
                            visit_type(x.args[0].type)
            if e.objective is not None:
                for x in walk_nodes(e.objective):
                    if x.op == "member":
                        visit_type(x.args[0].type)
        return seen

    # -- elements -----------------------------------------------------------------

    def _element(self, e: SubsystemIR):
        for c in e.children:
            self._element(c)
        self._emit(S.comment(f"Element {e.name or '<root>'}" + (f" ({e.activation.kind})" if e.activation else "")))
        self._emit(self._init(e))
        if e.activation is None:
            self._emit(self._trans(e, fun_name(e, "trans")))
        else:
            self._emit(self._trans(e, fun_name(e, "trans") + ".body"))
            self._emit(self._wrapper(e))

    def _emit(self, cmd: S.Command):
        if cmd.kind == "define-fun":
            self.funs[cmd.name] = cmd
        self._defs.append(cmd)

    def _init(self, e: SubsystemIR) -> S.Command:
        sc = _Scope(e, self.ops)
        for s in e.all_states:
            sc.param("state0", s.name, s.type, "@0")
        parts = []
        for s in e.own_states + list(e.wrapper_states):
            parts.append(app("=", sc.lookup("state", s.name), self.ops.const(s.init)))
        for c in e.children:
            f = S.fun_of(self.funs[fun_name(c, "init")])
            parts.append(f(*[sc.lookup("state", s.name) for s in c.all_states]))
        return S.define_fun(fun_name(e, "init"), sc.params, S.BOOL, S.and_(*parts))

    def _trans(self, e: SubsystemIR, name: str) -> S.Command:
        sc = _Scope(e, self.ops)
        states = e.body_states
        names = {e.rel(s.name) + "@0" for s in states} | {e.rel(s.name) + "@1" for s in states}
        names |= {e.rel(v.name) for v in e.inputs + e.outputs + e.all_aux}
        cname = _step_param(names)
        c = S.sym(cname, S.INT)
        sc.params.append((cname, S.INT))
        sc.used.add(cname)
        for s in states:
            sc.param("state0", s.name, s.type, "@0")
        for s in states:
            sc.param("state1", s.name, s.type, "@1")
        for v in e.inputs:
            sc.param("var", v.name, v.type)
        for v in e.outputs:
            sc.param("var", v.name, v.type)
        for v in e.all_aux:
            sc.param("var", v.name, v.type)
        body = self._body(e, sc, c)
        return S.define_fun(name, sc.params, S.BOOL, body)

    def _body(self, e: SubsystemIR, sc: _Scope, c: Term) -> Term:
        ops = self.ops
        eqs = list(e.equations)
        defs = {eq.target: eq for eq in eqs if eq.kind == "def"}
        uses: dict[str, int] = {k: 0 for k in defs}

        def count(node):
            for x in walk_nodes(node):
                if x.op == "var" and x.attr in uses:
                    uses[x.attr] += 1

        for eq in eqs:
            if eq.kind == "bus":
                for a in eq.args:
                    count(a)
            elif eq.kind != "call":
                count(eq.expr)
        owner = self.owner is not None and tuple(e.path) == self.owner and e.objective is not None
        if owner:
            count(e.objective)
            count(e.objective)
        # a local copied into a port variable takes that variable's name
        renamed: dict[str, str] = {}
        dropped: set[int] = set()
        for i, eq in enumerate(eqs):
            if eq.kind in ("out", "port") and eq.expr.op == "var" and eq.expr.attr in defs \
                    and eq.expr.attr not in renamed:
                renamed[eq.expr.attr] = eq.target
                dropped.add(i)
        inline: dict[str, Term] = {}
        bound: dict[str, Term] = {}
        groups: list[list[tuple[str, Term]]] = [[]]
        group_names: set[str] = set()
        parts: list[Term] = []

        def env(kind, glob):
            if kind == "var":
                if glob in renamed:
                    return sc.lookup("var", renamed[glob])
                if glob in inline:
                    return inline[glob]
                if glob in bound:
                    return bound[glob]
            return sc.lookup(kind, glob)

        def reads_group(node) -> bool:
            return any(x.op == "var" and x.attr in group_names for x in walk_nodes(node))

        for i, eq in enumerate(eqs):
            k = eq.kind
            if i in dropped:
                continue
            if k == "def":
                if eq.target in renamed:
                    parts.append(app("=", sc.lookup("var", renamed[eq.target]), ops.term(eq.expr, env)))
                    continue
                if uses[eq.target] == 0:
                    continue
                t = ops.term(eq.expr, env)
                if uses[eq.target] == 1 or t.op in ("sym", "lit"):
                    inline[eq.target] = t
                    continue
                lname = e.rel(eq.target)
                if reads_group(eq.expr):
                    groups.append([])
                    group_names.clear()
                groups[-1].append((lname, t))
                group_names.add(eq.target)
                bound[eq.target] = S.sym(lname, t.sort)
                sc.used.add(lname)
            elif k in ("out", "port"):
                parts.append(app("=", sc.lookup("var", eq.target), ops.term(eq.expr, env)))
            elif k == "next":
                parts.append(app("=", sc.names[("state1", eq.target)], ops.term(eq.expr, env)))
            elif k == "bus":
                x = sc.lookup("var", eq.target)
                bus = self._bus_of(e, eq.target)
                accs = dict(ops.accessors(bus))
                for leaf, a in zip(eq.leaves, eq.args):
                    parts.append(app("=", accs[leaf](x), ops.term(a, env)))
            elif k == "call":
                parts.append(self._call(eq.child, sc, c))
            else:
                raise EncodingError(f"unknown equation kind {k}")
        if owner:
            phi = ops.term(e.objective, env)
            parts.append(app("=>", app("=", c, self.curr_step), S.not_(phi)))
            parts.append(app("=>", self.flag_kind, app("=>", app("<", c, self.curr_step), phi)))
        body = S.and_(*parts)
        for g in reversed(groups):
            body = S.let(g, body)
        return body

    def _bus_of(self, e: SubsystemIR, glob: str) -> str:
        for v in e.all_aux + e.inputs + e.outputs:
            if v.name == glob:
                return v.type.bus_name
        raise EncodingError(f"{glob} is not a bus variable")

    def _call(self, child: SubsystemIR, sc: _Scope, c: Term) -> Term:
        f = S.fun_of(self.funs[fun_name(child, "trans")])
        args = [c]
        args += [sc.names[("state0", s.name)] for s in child.all_states]
        args += [sc.names[("state1", s.name)] for s in child.all_states]
        args += [sc.lookup("var", v.name) for v in child.inputs]
        if child.control is not None:
            args.append(sc.lookup("var", child.control.name))
        args += [sc.lookup("var", v.name) for v in child.outputs]
        args += [sc.lookup("var", v.name) for v in child.all_aux]
        return f(*args)

    def _wrapper(self, e: SubsystemIR) -> S.Command:
        act = e.activation
        ops = self.ops
        sc = _Scope(e, ops)
        names = {e.rel(s.name) + "@0" for s in e.all_states} | {e.rel(s.name) + "@1" for s in e.all_states}
        names |= {e.rel(v.name) for v in e.inputs + e.outputs + e.all_aux}
        if e.control is not None:
            names.add(e.rel(e.control.name))
        cname = _step_param(names)
        c = S.sym(cname, S.INT)
        sc.params.append((cname, S.INT))
        sc.used.add(cname)
        for s in e.all_states:
            sc.param("state0", s.name, s.type, "@0")
        for s in e.all_states:
            sc.param("state1", s.name, s.type, "@1")
        for v in e.inputs:
            sc.param("var", v.name, v.type)
        ctl = sc.param("var", e.control.name, e.control.type) if e.control is not None else None
        for v in e.outputs:
            sc.param("var", v.name, v.type)
        for v in e.all_aux:
            sc.param("var", v.name, v.type)
        s0 = lambda name: sc.names[("state0", name)]  # noqa: E731
        s1 = lambda name: sc.names[("state1", name)]  # noqa: E731
        zero = Fraction(0)
        ctl_t = e.control.type if e.control is not None else None
        extra = []
        if act.kind == "enabled":
            on = ops.cmpc(ctl, ctl_t, ">", zero)
        elif act.kind == "triggered":
            trig = f"{e.name}/$trig"
            prev, now = s0(trig), ctl
            rise = app("and", ops.cmpc(prev, ctl_t, "<=", zero), ops.cmpc(now, ctl_t, ">", zero))
            fall = app("and", ops.cmpc(prev, ctl_t, ">", zero), ops.cmpc(now, ctl_t, "<=", zero))
            on = {"rising": rise, "falling": fall, "either": app("or", rise, fall)}[act.edge]
            extra.append(app("=", s1(trig), ctl))
        elif act.kind == "rate":
            if act.n < 1:
                raise EncodingError(f"{e.name}: activation period must be >= 1")
            cnt = f"{e.name}/$cnt"
            k0, k1 = s0(cnt), s1(cnt)
            n = act.n
            extra.append(app("and", app("<=", S.int_lit(0), k0), app("<", k0, S.int_lit(n))))
            extra.append(app("=", k1, app("ite", app("=", k0, S.int_lit(n - 1)), S.int_lit(0),
                                            app("+", k0, S.int_lit(1)))))
            on = app("=", k0, S.int_lit(0))
        else:
            raise EncodingError(f"unknown activation {act.kind}")
        body_f = S.fun_of(self.funs[fun_name(e, "trans") + ".body"])
        pre = [s0(s.name) for s in e.body_states]
        if act.kind == "enabled" and act.reset:
            en = f"{e.name}/$en"
            pre = [app("ite", s0(en), s0(s.name), ops.const(s.init)) for s in e.body_states]
        args = [c] + pre + [s1(s.name) for s in e.body_states]
        args += [sc.lookup("var", v.name) for v in e.inputs]
        args += [sc.lookup("var", v.name) for v in e.outputs]
        args += [sc.lookup("var", v.name) for v in e.all_aux]
        active = [body_f(*args)]
        inactive = []
        for v in e.outputs:
            h = hold_state(e, v)
            active.append(app("=", s1(h), sc.lookup("var", v.name)))
            inactive.append(app("=", sc.lookup("var", v.name), s0(h)))
            inactive.append(app("=", s1(h), s0(h)))
        for s in e.body_states:
            inactive.append(app("=", s1(s.name), s0(s.name)))
        if self.owner is not None and e.contains(self.owner):
            inactive.append(app("not", app("=", c, self.curr_step)))
        if act.kind == "enabled" and act.reset:
            en = f"{e.name}/$en"
            active.append(s1(en))
            inactive.append(app("not", s1(en)))
        body = S.and_(*extra, app("ite", on, S.and_(*active), S.and_(*inactive)))
        return S.define_fun(fun_name(e, "trans"), sc.params, S.BOOL, body)


# ---------------------------------------------------------------------------
# execution paths


class PathEncoder:
    """Per-step declarations and assertions for a top element.

    Step ``j`` constants are named ``<var>@<j>``; the initial state uses
    ``@i``.  Guards: ``g_init`` enables the initial-state predicate and
    ``g_step_<j>`` fixes ``curr_step = j``.
    """

    def __init__(self, sys: SystemEncoder, top: SubsystemIR | None = None):
        self.sys = sys
        self.top = top or sys.prog.root
        self.mode = sys.mode
        self.steps = 0
        self.trans = sys.top_fun(self.top) if sys.funs else None
        e = self.top
        self.state_vars = list(e.all_states)
        self.body_states = list(e.body_states)
        self.inputs = list(e.inputs)
        self.outputs = list(e.outputs)
        self.aux = list(e.all_aux)

    def ensure_funs(self):
        if self.trans is None:
            self.trans = self.sys.top_fun(self.top)

    def sym(self, glob: str, t: DataType, j) -> Term:
        return S.sym(f"{glob}@{j}", sort_of(t, self.mode))

    def state_sym(self, s, j: int) -> Term:
        return self.sym(s.name, s.type, "i" if j < 0 else j)

    def init_guard(self) -> list[S.Command]:
        cmds = [S.declare_const(f"{s.name}@i", sort_of(s.type, self.mode)) for s in self.state_vars]
        f = self.sys.init_fun(self.top)
        cmds.append(S.declare_const("g_init", S.BOOL))
        cmds.append(S.assert_(app("=>", S.sym("g_init", S.BOOL), f(*[self.state_sym(s, -1) for s in self.state_vars]))))
        return cmds

    def step(self, j: int) -> list[S.Command]:
        if j != self.steps:
            raise EncodingError(f"steps must be encoded contiguously: expected {self.steps}, got {j}")
        self.ensure_funs()
        cmds = []
        for s in self.state_vars:
            cmds.append(S.declare_const(f"{s.name}@{j}", sort_of(s.type, self.mode)))
        for v in self.inputs + self.outputs + self.aux:
            cmds.append(S.declare_const(f"{v.name}@{j}", sort_of(v.type, self.mode)))
        args = [S.int_lit(j)]
        args += [self.state_sym(s, j - 1) for s in self.body_states]
        args += [self.state_sym(s, j) for s in self.body_states]
        args += [self.sym(v.name, v.type, j) for v in self.inputs + self.outputs + self.aux]
        cmds.append(S.assert_(self.trans(*args)))
        g = S.sym(f"g_step_{j}", S.BOOL)
        cmds.append(S.declare_const(g.text, S.BOOL))
        cmds.append(S.assert_(app("=>", g, app("=", self.sys.curr_step, S.int_lit(j)))))
        self.steps += 1
        return cmds

    def step_guard(self, j: int) -> Term:
        return S.sym(f"g_step_{j}", S.BOOL)

    @staticmethod
    def init_literal() -> Term:
        return S.sym("g_init", S.BOOL)

    def symbols(self, n: int) -> list[tuple[str, Term, DataType, object]]:
        """(role, symbol, type, key) for every value of an ``n``-step path."""
        out = []
        for s in self.state_vars:
            out.append(("state", self.state_sym(s, -1), s.type, (-1, s.name)))
        for j in range(n):
            for s in self.state_vars:
                out.append(("state", self.state_sym(s, j), s.type, (j, s.name)))
            for role, vs in (("input", self.inputs), ("output", self.outputs), ("aux", self.aux)):
                for v in vs:
                    out.append((role, self.sym(v.name, v.type, j), v.type, (j, v.name)))
        return out

    # -- value pinning (agreement checks) -------------------------------------------

    def pin(self, sym: Term, value, t: DataType) -> list[Term]:
        if t.is_bus:
            accs = dict(self.sys.ops.accessors(t.bus_name))
            types = dict(dtype_flatten(t, self.sys.prog.tm.bus_types))
            return [app("=", accs[k](sym), value_to_term(v, types[k], self.mode)) for k, v in value.items()]
        return [app("=", sym, value_to_term(value, t, self.mode))]

    def pin_trace(self, trace, with_outputs: bool = True) -> list[Term]:
        """Equalities fixing the path to a simulated trace."""
        out = []
        for s in self.state_vars:
            out += self.pin(self.state_sym(s, -1), trace.states[0][s.name], s.type)
        for j in range(trace.length):
            for s in self.state_vars:
                out += self.pin(self.state_sym(s, j), trace.states[j + 1][s.name], s.type)
            sig = trace.signals[j]
            for v in self.inputs:
                out += self.pin(self.sym(v.name, v.type, j), sig[v.name], v.type)
            if with_outputs:
                for v in self.outputs + self.aux:
                    if v.name in sig:
                        out += self.pin(self.sym(v.name, v.type, j), sig[v.name], v.type)
        return out


def encode_script(prog: Program, mode: str, k: int, top: SubsystemIR | None = None) -> list[S.Command]:
    """System definitions, a length-``k`` path and the final reachability check."""
    sys = SystemEncoder(prog, mode)
    cmds = sys.system(top)
    path = PathEncoder(sys, top)
    cmds.append(S.comment("Encoding of the execution path."))
    cmds += path.init_guard()
    for j in range(k):
        cmds += path.step(j)
    if k > 0:
        cmds.append(S.comment(f"Check the reachability at step {k - 1}."))
        cmds.append(S.check_sat_assuming([path.init_literal(), path.step_guard(k - 1), S.not_(sys.flag_kind)]))
    return cmds


def encode_text(prog: Program, mode: str, k: int) -> str:
    return S.print_script(encode_script(prog, mode, k))
