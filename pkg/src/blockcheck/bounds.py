"""Interval pre-analysis of bounded executions.

Starting from the (concrete) initial state and letting every input range
over its whole type, each step is evaluated over intervals.  When the
intervals show that the objective cannot be false at step ``j``, a
path query for a violation at ``j`` is unsatisfiable and the solver need
not be asked.  Such queries are the expensive ones for the exact
encoding, where proving the absence of a violation through a chain of
floating-point multiplications takes a bit-level solver a long time.

The abstraction over-approximates both the simulator and the encoding of
the same mode, including where they underspecify (division by zero in
approx mode, NaN/infinity converted to an integer in exact mode).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from . import floats
from .core import DataType, FloatBits, dtype_flatten, to_rational
from .ir import Node, Program, SubsystemIR, hold_state
from .simulator import IDEAL, MACHINE, Evaluator, _stub_vars

POS, NEG = float("inf"), float("-inf")
TF = frozenset((True, False))
T = frozenset((True,))
F = frozenset((False,))


@dataclass(frozen=True)
class Iv:
    """Closed interval of rationals; infinite ends also stand for IEEE infinities."""

    lo: object  # Fraction or -inf
    hi: object  # Fraction or +inf
    nan: bool = False

    @property
    def point(self):
        return self.lo if self.lo == self.hi and not self.nan else None

    def __contains__(self, x) -> bool:
        return self.lo <= x <= self.hi


TOP = Iv(NEG, POS, True)


def point(x) -> Iv:
    return Iv(x, x)


def join(a, b):
    if a is None:
        return b
    if b is None:
        return a
    if isinstance(a, frozenset):
        return a | b
    if isinstance(a, dict):
        return {k: join(a[k], b[k]) for k in a}
    return Iv(min(a.lo, b.lo), max(a.hi, b.hi), a.nan or b.nan)


def _floor(x):
    return x if x in (POS, NEG) else Fraction(x.numerator // x.denominator)


def _ceil(x):
    return x if x in (POS, NEG) else -_floor(-x)


def _mul(a, b):
    if a == 0 or b == 0:
        return Fraction(0)
    return a * b


def _add(a, b, side):
    if {a, b} == {POS, NEG}:
        return NEG if side < 0 else POS
    return a + b


def _bools(v) -> Iv:
    return Iv(Fraction(0 if False in v else 1), Fraction(1 if True in v else 0))


def _num(v) -> Iv:
    return _bools(v) if isinstance(v, frozenset) else v


class Domain:
    """Abstract operators for one encoding mode (``exact`` or ``approx``)."""

    def __init__(self, mode: str, bus_types: dict):
        self.exact = mode == "exact"
        self.buses = bus_types
        self.ev = Evaluator(MACHINE if self.exact else IDEAL)

    # -- values -----------------------------------------------------------------

    def top(self, t: DataType):
        if t.is_bus:
            return {lp: self.top(lt) for lp, lt in dtype_flatten(t, self.buses)}
        if t.is_bool:
            return TF
        if t.is_int and self.exact:
            lo, hi = t.int_range
            return Iv(Fraction(lo), Fraction(hi))
        if t.is_float and self.exact:
            return TOP
        return Iv(NEG, POS)

    def alpha(self, v):
        """Abstraction of a concrete value."""
        if isinstance(v, dict):
            return {k: self.alpha(x) for k, x in v.items()}
        if isinstance(v, bool):
            return frozenset((v,))
        if isinstance(v, FloatBits):
            if v.is_nan:
                return Iv(POS, NEG, True)
            if v.is_inf:
                return point(NEG if v.sign else POS)
            return point(v.to_fraction())
        return point(to_rational(v))

    # -- rounding ---------------------------------------------------------------

    def round(self, r: Iv, t: DataType) -> Iv:
        """Account for the rounding (floats) or wrapping (machine integers) into ``t``."""
        if t.is_float and self.exact:
            f = floats.fmt_of(t.base)
            rel = Fraction(1, 1 << (f.sb - 1))
            tiny = Fraction(2) ** (f.emin - f.sb + 1)
            lo, hi = r.lo, r.hi
            if lo not in (POS, NEG) and floats.round_fraction(lo, t.base).to_fraction() != lo:
                lo = lo - abs(lo) * rel - tiny
            if hi not in (POS, NEG) and floats.round_fraction(hi, t.base).to_fraction() != hi:
                hi = hi + abs(hi) * rel + tiny
            if lo != NEG and lo < -f.max_finite:
                lo = NEG
            if hi != POS and hi > f.max_finite:
                hi = POS
            if lo != NEG and lo > f.max_finite:
                lo = f.max_finite
            if hi != POS and hi < -f.max_finite:
                hi = -f.max_finite
            return Iv(lo, hi, r.nan)
        return r

    def fit_int(self, r: Iv, t: DataType, sat: bool) -> Iv:
        if not (t.is_int and self.exact):
            return Iv(r.lo, r.hi)
        lo, hi = (Fraction(x) for x in t.int_range)
        if r.nan or r.lo < lo or r.hi > hi:
            if sat:
                return Iv(min(max(r.lo, lo), hi), max(min(r.hi, hi), lo))
            return Iv(lo, hi)
        return Iv(r.lo, r.hi)

    # -- arithmetic -------------------------------------------------------------

    def arith(self, op: str, t: DataType, args: list, sat: bool) -> Iv:
        args = [_num(a) for a in args]
        is_float = t.is_float and self.exact
        if op == "neg":
            a = args[0]
            r = Iv(-a.hi, -a.lo, a.nan)
        elif op == "abs":
            a = args[0]
            if a.lo >= 0:
                r = a
            elif a.hi <= 0:
                r = Iv(-a.hi, -a.lo, a.nan)
            else:
                r = Iv(Fraction(0), max(-a.lo, a.hi), a.nan)
        else:
            a, b = args
            nan = a.nan or b.nan
            if op == "add":
                r = Iv(_add(a.lo, b.lo, -1), _add(a.hi, b.hi, 1), nan)
            elif op == "sub":
                r = Iv(_add(a.lo, -b.hi, -1), _add(a.hi, -b.lo, 1), nan)
            elif op == "mul":
                ps = [_mul(x, y) for x in (a.lo, a.hi) for y in (b.lo, b.hi)]
                r = Iv(min(ps), max(ps), nan)
            elif op == "div":
                if b.lo <= 0 <= b.hi or b.nan:
                    # division by zero: IEEE infinities/NaN, unconstrained in approx mode
                    return self.top(t) if not is_float else TOP
                inv = [Fraction(0) if y in (POS, NEG) else 1 / y for y in (b.lo, b.hi)]
                ps = [_mul(x, y) for x in (a.lo, a.hi) for y in inv]
                r = Iv(min(ps), max(ps), nan)
                if t.is_int or t.base == "integer":
                    r = Iv(_floor(r.lo), _ceil(r.hi))
            else:
                raise ValueError(op)
            if is_float and any(x in (POS, NEG) for x in (a.lo, a.hi, b.lo, b.hi)):
                r = Iv(r.lo, r.hi, True)  # inf - inf, 0 * inf, ...
        if is_float:
            return self.round(r, t)
        if t.is_int:
            return self.fit_int(r, t, sat)
        return Iv(r.lo, r.hi)

    def cast(self, x, src: DataType, dst: DataType, rounding: str, sat: bool):
        if dst.is_bool:
            if isinstance(x, frozenset):
                return x
            out = set()
            if x.nan or x.lo != 0 or x.hi != 0:
                out.add(True)
            if 0 in x:
                out.add(False)
            return frozenset(out)
        x = _num(x)
        if dst.is_float or dst.base == "real":
            if not self.exact or dst.base == "real":
                if x.nan or x.lo == NEG or x.hi == POS:
                    return Iv(NEG, POS)
                return Iv(x.lo, x.hi)
            return self.round(x, dst)
        # integer targets: any rounding mode stays within floor(lo)..ceil(hi)
        r = Iv(_floor(x.lo), _ceil(x.hi))
        if x.nan or x.lo == NEG or x.hi == POS:
            # the encoder maps unconvertible values to 0
            r = join(r, point(Fraction(0)))
        if not self.exact or dst.base == "integer":
            return r
        out = self.fit_int(r, dst, sat)
        if x.nan or x.lo == NEG or x.hi == POS or out != r:
            out = join(out, point(Fraction(0)))
        return out

    # -- comparisons ------------------------------------------------------------

    def compare(self, a, b, op: str) -> frozenset:
        a, b = _num(a), _num(b)
        nan = a.nan or b.nan
        out = set()
        empty_a = a.lo > a.hi
        empty_b = b.lo > b.hi
        if op in ("lt", "<"):
            if not (empty_a or empty_b) and a.lo < b.hi:
                out.add(True)
            if nan or (not (empty_a or empty_b) and a.hi >= b.lo):
                out.add(False)
        elif op in ("le", "<="):
            if not (empty_a or empty_b) and a.lo <= b.hi:
                out.add(True)
            if nan or (not (empty_a or empty_b) and a.hi > b.lo):
                out.add(False)
        elif op in ("gt", ">"):
            return self.compare(b, a, "lt")
        elif op in ("ge", ">="):
            return self.compare(b, a, "le")
        elif op in ("eq", "=="):
            if not (empty_a or empty_b) and a.lo <= b.hi and b.lo <= a.hi:
                out.add(True)
            if nan or not (a.point is not None and a.point == b.point):
                out.add(False)
        elif op in ("ne", "!="):
            eq = self.compare(a, b, "eq")
            out = {not x for x in eq}
            if nan:
                out.add(True)
        else:
            raise ValueError(op)
        return frozenset(out)


class AbstractRun:
    """Steps a top element over the interval domain."""

    def __init__(self, prog: Program, mode: str, top: SubsystemIR | None = None):
        self.prog = prog
        self.top = top or prog.root
        self.dom = Domain(mode, prog.tm.bus_types)
        self.inits = {s.name: self.dom.alpha(self.dom.ev.const(s.init)) for s in self.top.all_states}
        self.stubs = {v.name: v.type for v in _stub_vars(prog)}
        self.owner = tuple(prog.owner)

    # -- expressions ------------------------------------------------------------

    def eval(self, n: Node, env: dict, pre: dict):
        op = n.op
        d = self.dom
        if op == "var":
            v = env.get(n.attr)
            return d.top(n.type) if v is None else v
        if op == "state":
            return pre[n.attr]
        if op == "const":
            return d.alpha(d.ev.const(n))
        if op == "ite":
            c = self.eval(n.args[0], env, pre)
            r = None
            if True in c:
                r = join(r, self.eval(n.args[1], env, pre))
            if False in c:
                r = join(r, self.eval(n.args[2], env, pre))
            return r
        args = [self.eval(a, env, pre) for a in n.args]
        if op == "and":
            return frozenset({all(p) for p in _product(args)})
        if op == "or":
            return frozenset({any(p) for p in _product(args)})
        if op == "not":
            return frozenset({not x for x in args[0]})
        if op == "xor":
            return frozenset({sum(p) % 2 == 1 for p in _product(args)})
        if op in ("lt", "le", "gt", "ge", "eq", "ne"):
            return d.compare(args[0], args[1], op)
        if op == "cmpc":
            return d.compare(args[0], point(n.attr[1]), n.attr[0])
        if op in ("min", "max"):
            a, b = (_num(x) for x in args)
            if a.nan or b.nan:
                return join(a, b)
            f = min if op == "min" else max
            return Iv(f(a.lo, b.lo), f(a.hi, b.hi))
        if op == "saturate":
            hi, lo, x = (_num(v) for v in args)
            r = None
            if False in d.compare(x, hi, "le"):
                r = join(r, hi)
            if False in d.compare(x, lo, "ge"):
                r = join(r, lo)
            m = Iv(max(x.lo, lo.lo), min(x.hi, hi.hi))
            if m.lo <= m.hi:
                r = join(r, m)
            return r if r is not None else join(hi, lo)
        if op == "cast":
            rounding, sat = n.attr
            return d.cast(args[0], n.args[0].type, n.type, rounding, sat)
        if op == "member":
            return args[0][n.attr]
        if op == "lift":
            x = _num(args[0])
            if x.nan:
                return Iv(NEG, POS)
            return Iv(x.lo, x.hi)
        if op in ("add", "sub", "mul", "div", "neg", "abs"):
            return d.arith(op, n.type, args, n.attr == "sat")
        raise ValueError(f"unknown operator {op}")

    # -- elements ---------------------------------------------------------------

    def element(self, e: SubsystemIR, pre, env, post, fail: list):
        for eq in e.equations:
            k = eq.kind
            if k == "call":
                self.child(eq.child, pre, env, post, fail)
            elif k == "next":
                post[eq.target] = self.eval(eq.expr, env, pre)
            elif k == "bus":
                env[eq.target] = {lp: self.eval(a, env, pre) for lp, a in zip(eq.leaves, eq.args)}
            else:
                env[eq.target] = self.eval(eq.expr, env, pre)
        if e.objective is not None and False in self.eval(e.objective, env, pre):
            fail.append(True)

    def child(self, c: SubsystemIR, pre, env, post, fail):
        act = c.activation
        if act is None:
            self.element(c, pre, env, post, fail)
            return
        name = c.name
        d = self.dom
        zero = point(Fraction(0))
        if act.kind == "enabled":
            on = d.compare(env[c.control.name], zero, ">")
        elif act.kind == "triggered":
            prev, now = pre[f"{name}/$trig"], env[c.control.name]
            p_le, n_gt = d.compare(prev, zero, "<="), d.compare(now, zero, ">")
            p_gt, n_le = d.compare(prev, zero, ">"), d.compare(now, zero, "<=")
            rise = frozenset(a and b for a in p_le for b in n_gt)
            fall = frozenset(a and b for a in p_gt for b in n_le)
            on = {"rising": rise, "falling": fall,
                  "either": frozenset(a or b for a in rise for b in fall)}[act.edge]
            post[f"{name}/$trig"] = now
        else:
            cnt = pre[f"{name}/$cnt"]
            on = d.compare(cnt, zero, "eq")
            if cnt.point is not None:
                nxt = 0 if cnt.point == act.n - 1 else cnt.point + 1
                post[f"{name}/$cnt"] = point(Fraction(nxt))
            else:
                post[f"{name}/$cnt"] = Iv(Fraction(0), Fraction(act.n - 1))
        outs = []
        if True in on:
            env1, post1 = dict(env), dict(post)
            body_pre = pre
            if act.kind == "enabled" and act.reset and False in pre[f"{name}/$en"]:
                body_pre = dict(pre)
                for s in c.body_states:
                    i = self.inits[s.name]
                    body_pre[s.name] = i if pre[f"{name}/$en"] == F else join(pre[s.name], i)
            self.element(c, body_pre, env1, post1, fail)
            for o in c.outputs:
                post1[hold_state(c, o)] = env1[o.name]
            outs.append((env1, post1))
        if False in on:
            env2, post2 = dict(env), dict(post)
            for o in c.outputs:
                h = hold_state(c, o)
                env2[o.name] = pre[h]
                post2[h] = pre[h]
            for s in c.body_states:
                post2[s.name] = pre[s.name]
            outs.append((env2, post2))
        if len(outs) == 1:
            env.update(outs[0][0])
            post.update(outs[0][1])
        else:
            (e1, p1), (e2, p2) = outs
            for k in set(e1) | set(e2):
                env[k] = join(e1.get(k), e2.get(k))
            for k in set(p1) | set(p2):
                post[k] = join(p1.get(k), p2.get(k))
        if act.kind == "enabled" and act.reset:
            post[f"{name}/$en"] = on

    def step(self, pre: dict) -> tuple[dict, bool]:
        """Abstract successor of ``pre`` and whether the objective may fail."""
        top = self.top
        d = self.dom
        env = {v.name: d.top(v.type) for v in top.inputs}
        for name, t in self.stubs.items():
            env[name] = d.top(t)
        post: dict = {}
        fail: list = []
        self.element(top, pre, env, post, fail)
        for s in top.all_states:
            if s.name not in post:
                post[s.name] = pre[s.name]
        return post, bool(fail)


def _product(args):
    out = [()]
    for a in args:
        out = [p + (x,) for p in out for x in a]
    return out


class Bounds:
    """Per-step answers to "may the objective be false at step j?"."""

    def __init__(self, prog: Program, mode: str, top: SubsystemIR | None = None):
        self.run = AbstractRun(prog, mode, top)
        self.states = [self.run.inits]
        self.fails: list[bool] = []

    def may_fail(self, j: int) -> bool:
        while len(self.fails) <= j:
            post, fail = self.run.step(self.states[-1])
            self.states.append(post)
            self.fails.append(fail)
        return self.fails[j]
