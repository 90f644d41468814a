"""Step interpreter for lowered models in machine or ideal arithmetic.

Machine mode uses IEEE-754 (round to nearest even) at each signal's
declared precision and fixed-width integers; ideal mode uses exact
rationals and unbounded integers.  The two mirror the exact and the
approximate encodings respectively.
"""

from __future__ import annotations

import csv
import io
import random
from fractions import Fraction

from . import floats
from .core import (CastError, DataType, ModelError, Trace, clamp_int, coerce_literal, dtype_flatten, to_rational,
                   value_cast, wrap_int, zero_value)
from .floats import FloatBits
from .ir import Node, Program, SubsystemIR, hold_state

MACHINE, IDEAL = "machine", "ideal"


class SimulationError(ModelError):
    """Run-time failure: NaN to integer, division by zero in ideal mode, ..."""


# ---------------------------------------------------------------------------
# scalar semantics


def _trunc_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def bv_div(a: int, b: int, signed: bool, bits: int) -> int:
    """SMT-LIB bvsdiv/bvudiv on the values of ``bits``-wide operands."""
    if b == 0:
        if not signed:
            return (1 << bits) - 1
        return -1 if a >= 0 else 1
    q = _trunc_div(a, b)
    if signed:
        q &= (1 << bits) - 1
        if q >= 1 << (bits - 1):
            q -= 1 << bits
    return q


def _int_arith(op: str, t: DataType, args: list[int], mode: str, sat: bool) -> int:
    if op == "div":
        a, b = args
        if mode == IDEAL or not t.is_int:
            if b == 0:
                raise SimulationError("integer division by zero")
            return _trunc_div(a, b)
        if sat:
            return clamp_int(bv_div(a, b, True, 2 * t.bits + 2), t)
        return wrap_int(bv_div(a, b, t.signed, t.bits), t)
    if op == "add":
        r = args[0] + args[1]
    elif op == "sub":
        r = args[0] - args[1]
    elif op == "mul":
        r = args[0] * args[1]
    elif op == "neg":
        r = -args[0]
    elif op == "abs":
        r = abs(args[0])
    else:
        raise SimulationError(f"unknown integer operator {op}")
    if mode == IDEAL or not t.is_int:
        return r
    return clamp_int(r, t) if sat else wrap_int(r, t)


def _float_arith(op: str, args: list[FloatBits]) -> FloatBits:
    if op == "add":
        return floats.add(*args)
    if op == "sub":
        return floats.sub(*args)
    if op == "mul":
        return floats.mul(*args)
    if op == "div":
        return floats.div(*args)
    if op == "neg":
        return floats.neg(args[0])
    if op == "abs":
        return floats.fabs(args[0])
    raise SimulationError(f"unknown float operator {op}")


def _rat_arith(op: str, args: list[Fraction]) -> Fraction:
    if op == "add":
        return args[0] + args[1]
    if op == "sub":
        return args[0] - args[1]
    if op == "mul":
        return args[0] * args[1]
    if op == "div":
        if args[1] == 0:
            raise SimulationError("division by zero")
        return args[0] / args[1]
    if op == "neg":
        return -args[0]
    if op == "abs":
        return abs(args[0])
    raise SimulationError(f"unknown operator {op}")


def compare(a, b, op: str) -> bool:
    """Typed comparison (IEEE semantics for floats; NaN is unordered)."""
    if isinstance(a, FloatBits):
        c = floats._cmp(a, b)
        if c is None:
            return op == "ne"
    elif isinstance(a, bool):
        c = (a > b) - (a < b)
    else:
        c = (a > b) - (a < b)
    return {"lt": c < 0, "le": c <= 0, "gt": c > 0, "ge": c >= 0, "eq": c == 0, "ne": c != 0}[op]


def compare_const(v, op: str, r: Fraction) -> bool:
    if isinstance(v, FloatBits):
        return floats.compare_rational(v, op, r)
    x = to_rational(v)
    return floats._apply_cmp((x > r) - (x < r), op)


class Evaluator:
    def __init__(self, mode: str):
        if mode not in (MACHINE, IDEAL):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self._consts: dict = {}

    def const(self, n: Node):
        key = (n.attr, n.type)
        if key not in self._consts:
            t = n.type
            if t.is_bool:
                v = bool(n.attr)
            elif t.base == "real":
                v = Fraction(n.attr)
            elif t.base == "integer":
                v = int(n.attr)
            else:
                v = coerce_literal(n.attr, t, self.mode)
            self._consts[key] = v
        return self._consts[key]

    def eval(self, n: Node, env: dict, pre: dict):
        op = n.op
        if op == "var":
            try:
                return env[n.attr]
            except KeyError:
                raise SimulationError(f"{n.attr} is read before it is defined") from None
        if op == "state":
            return pre[n.attr]
        if op == "const":
            return self.const(n)
        if op == "ite":
            c = self.eval(n.args[0], env, pre)
            return self.eval(n.args[1] if c else n.args[2], env, pre)
        if op == "and":
            return all(self.eval(a, env, pre) for a in n.args)
        if op == "or":
            return any(self.eval(a, env, pre) for a in n.args)
        args = [self.eval(a, env, pre) for a in n.args]
        t = n.type
        if op == "not":
            return not args[0]
        if op == "xor":
            return sum(bool(a) for a in args) % 2 == 1
        if op in ("lt", "le", "gt", "ge", "eq", "ne"):
            return compare(args[0], args[1], op)
        if op == "cmpc":
            return compare_const(args[0], n.attr[0], n.attr[1])
        if op == "min":
            a, b = args
            return b if compare(b, a, "lt") else a
        if op == "max":
            a, b = args
            return b if compare(a, b, "lt") else a
        if op == "saturate":
            hi, lo, x = args
            if not compare(x, hi, "le"):
                return hi
            return x if compare(x, lo, "ge") else lo
        if op == "cast":
            rounding, sat = n.attr
            try:
                return value_cast(args[0], t, rounding=rounding, saturate=sat, mode=self.mode)
            except CastError as exc:
                raise SimulationError(str(exc)) from None
        if op == "member":
            return args[0][n.attr]
        if op == "lift":
            v = args[0]
            if isinstance(v, FloatBits) and not v.is_finite:
                raise SimulationError(f"non-finite value {v} in property arithmetic")
            return to_rational(v)
        if op in ("add", "sub", "mul", "div", "neg", "abs"):
            if t.is_float and self.mode == MACHINE:
                return _float_arith(op, args)
            if t.is_int or t.base == "integer":
                return _int_arith(op, t, args, self.mode, n.attr == "sat")
            return _rat_arith(op, args)
        raise SimulationError(f"unknown operator {op}")


# ---------------------------------------------------------------------------
# stepping


def initial_state(root: SubsystemIR, mode: str) -> dict:
    ev = Evaluator(mode)
    return {s.name: ev.const(s.init) for s in root.all_states}


class _Run:
    def __init__(self, prog: Program, mode: str):
        self.prog = prog
        self.ev = Evaluator(mode)
        self.mode = mode
        self.inits = {s.name: self.ev.const(s.init) for s in prog.root.all_states}

    def element(self, e: SubsystemIR, pre: dict, env: dict, post: dict, active: set, phi: list):
        active.add(e.path)
        ev = self.ev
        for eq in e.equations:
            k = eq.kind
            if k == "call":
                self.child(eq.child, pre, env, post, active, phi)
            elif k == "next":
                post[eq.target] = ev.eval(eq.expr, env, pre)
            elif k == "bus":
                env[eq.target] = {lp: ev.eval(a, env, pre) for lp, a in zip(eq.leaves, eq.args)}
            else:
                env[eq.target] = ev.eval(eq.expr, env, pre)
        if e.objective is not None:
            phi.append(bool(ev.eval(e.objective, env, pre)))

    def child(self, c: SubsystemIR, pre, env, post, active, phi):
        act = c.activation
        if act is None:
            self.element(c, pre, env, post, active, phi)
            return
        name = c.name
        if act.kind == "enabled":
            on = compare_const(env[c.control.name], ">", Fraction(0))
        elif act.kind == "triggered":
            prev, now = pre[f"{name}/$trig"], env[c.control.name]
            rise = compare_const(prev, "<=", Fraction(0)) and compare_const(now, ">", Fraction(0))
            fall = compare_const(prev, ">", Fraction(0)) and compare_const(now, "<=", Fraction(0))
            on = {"rising": rise, "falling": fall, "either": rise or fall}[act.edge]
            post[f"{name}/$trig"] = now
        else:
            cnt = pre[f"{name}/$cnt"]
            on = cnt == 0
            post[f"{name}/$cnt"] = 0 if cnt == act.n - 1 else cnt + 1
        if on:
            body_pre = pre
            if act.kind == "enabled" and act.reset and not pre[f"{name}/$en"]:
                body_pre = dict(pre)
                for s in c.body_states:
                    body_pre[s.name] = self.inits[s.name]
            self.element(c, body_pre, env, post, active, phi)
            for o in c.outputs:
                post[hold_state(c, o)] = env[o.name]
        else:
            for o in c.outputs:
                h = hold_state(c, o)
                env[o.name] = pre[h]
                post[h] = pre[h]
            for s in c.body_states:
                post[s.name] = pre[s.name]
        if act.kind == "enabled" and act.reset:
            post[f"{name}/$en"] = on

    def step(self, pre: dict, inputs: dict, aux: dict | None = None):
        root = self.prog.root
        env = {}
        for v in root.inputs:
            if v.name not in inputs:
                raise SimulationError(f"missing value for input {v.name}")
            env[v.name] = inputs[v.name]
        for v in _stub_vars(self.prog):
            if aux and v.name in aux:
                env[v.name] = aux[v.name]
            else:
                env[v.name] = _zero(v.type, self.mode, self.prog)
        post: dict = {}
        active: set = set()
        phi: list = []
        self.element(root, pre, env, post, active, phi)
        missing = [s.name for s in root.all_states if s.name not in post]
        if missing:
            raise SimulationError(f"next state undefined for {missing}")
        return post, env, active, phi


def _stub_vars(prog: Program):
    out = []
    for e in prog.root.walk():
        for b in e.blocks:
            if b.stub:
                out.extend(b.aux)
    return out


def _zero(t: DataType, mode: str, prog: Program):
    if t.is_bus:
        return {lp: zero_value(lt, mode) for lp, lt in dtype_flatten(t, prog.tm.bus_types)}
    return zero_value(t, mode)


def step(prog: Program, state: dict, inputs: dict, mode: str = MACHINE, aux: dict | None = None):
    """One transition: returns (next state, outputs, all signals)."""
    run = _Run(prog, mode)
    post, env, active, phi = run.step(state, inputs, aux)
    outs = {v.name: env[v.name] for v in prog.root.outputs}
    return post, outs, env


def simulate(prog: Program, inputs: list[dict], n: int | None = None, mode: str = MACHINE,
             aux: list[dict] | None = None, init: dict | None = None) -> Trace:
    """Run ``n`` steps (default: all given inputs) from the initial state."""
    n = len(inputs) if n is None else n
    if len(inputs) < n:
        raise SimulationError(f"input trace has {len(inputs)} steps, {n} requested")
    run = _Run(prog, mode)
    s = dict(run.inits) if init is None else dict(init)
    tr = Trace(states=[dict(s)])
    for j in range(n):
        post, env, active, phi = run.step(s, inputs[j], aux[j] if aux else None)
        tr.inputs.append({v.name: env[v.name] for v in prog.root.inputs})
        tr.outputs.append({v.name: env[v.name] for v in prog.root.outputs})
        tr.signals.append(env)
        tr.states.append(dict(post))
        tr.active.append(active)
        tr.holds.append(phi[0] if phi else None)
        if tr.violation is None and phi and phi[0] is False:
            tr.violation = j
        s = post
    return tr


def check_violation(trace: Trace, prog: Program | None = None) -> int | None:
    """Smallest step at which the property is false (None if never)."""
    for j, h in enumerate(trace.holds):
        if h is False:
            return j
    return None


# ---------------------------------------------------------------------------
# inputs and CSV


def random_value(t: DataType, rng: random.Random, mode: str, prog: Program | None = None, scale: int = 10):
    if t.is_bus:
        return {lp: random_value(lt, rng, mode, prog, scale) for lp, lt in dtype_flatten(t, prog.tm.bus_types)}
    if t.is_bool:
        return rng.random() < 0.5
    if t.is_int:
        lo, hi = t.int_range
        if rng.random() < 0.3:
            return rng.randint(lo, hi) if mode == MACHINE else rng.randint(-scale, scale)
        return max(lo, min(hi, rng.randint(-scale, scale))) if mode == MACHINE else rng.randint(-scale, scale)
    if t.is_float:
        x = Fraction(rng.randint(-scale * 100, scale * 100), 100)
        if mode == IDEAL:
            return x
        return floats.round_fraction(x, t.base)
    raise ValueError(f"no random values for {t}")


def random_inputs(prog: Program, n: int, rng: random.Random, mode: str = MACHINE) -> list[dict]:
    return [{v.name: random_value(v.type, rng, mode, prog) for v in prog.root.inputs} for _ in range(n)]


def to_machine(v, t: DataType, prog: Program | None = None):
    """Round an ideal value to the machine domain of ``t`` (RNE; ints wrap)."""
    if isinstance(v, dict):
        types = dict(dtype_flatten(t, prog.tm.bus_types))
        return {k: to_machine(x, types[k]) for k, x in v.items()}
    if isinstance(v, FloatBits) or t.is_bool:
        return v if not t.is_bool else bool(v)
    return value_cast(v, t.scalar, rounding="nearest", saturate=False, mode=MACHINE)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, FloatBits):
        return repr(float(v))
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    return str(v)


def parse_cell(text: str, t: DataType, mode: str):
    text = text.strip()
    if t.is_bool:
        if text.lower() in ("true", "1"):
            return True
        if text.lower() in ("false", "0"):
            return False
        raise SimulationError(f"not a Boolean: {text!r}")
    if t.is_float and mode == MACHINE:
        low = text.lower()
        if low in ("nan", "+nan", "-nan"):
            return floats.nan(t.base)
        if low in ("inf", "+inf", "infinity"):
            return floats.inf(t.base)
        if low in ("-inf", "-infinity"):
            return floats.inf(t.base, True)
        if low == "-0.0":
            return floats.zero(t.base, True)
    try:
        x = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise SimulationError(f"not a number: {text!r}") from None
    if mode == IDEAL:
        if t.is_int:
            if x.denominator != 1:
                raise SimulationError(f"not an integer: {text!r}")
            return int(x)
        return x
    return value_cast(x, t.scalar, rounding="nearest", saturate=False, mode=MACHINE)


def _columns(prog: Program, tr: Trace):
    cols = []

    def add(name, t, where):
        if t.is_bus:
            for lp, lt in dtype_flatten(t, prog.tm.bus_types):
                cols.append((f"{name}.{lp}", where, name, lp))
        else:
            cols.append((name, where, name, None))

    for v in prog.root.inputs:
        add(v.name, v.type, "in")
    for v in prog.root.outputs:
        add(v.name, v.type, "out")
    for s in prog.root.all_states:
        add(s.name, s.type, "state")
    return cols


def write_trace_csv(tr: Trace, prog: Program, fh=None, bits: bool = True) -> str:
    """Header ``step,<var>...``; one row per step from -1 (initial state).

    Machine floats get an extra ``<var>#bits`` column holding the raw
    pattern in hex; rationals are written as ``p/q``.
    """
    cols = _columns(prog, tr)
    sample = {}
    for row in tr.signals[:1] + [tr.states[0]]:
        sample.update(row)
    header = ["step"]
    with_bits = []
    for col, where, name, lp in cols:
        header.append(col)
        v = tr.states[0].get(name) if where == "state" else (tr.signals[0].get(name) if tr.signals else None)
        if lp is not None and isinstance(v, dict):
            v = v.get(lp)
        has = bits and isinstance(v, FloatBits)
        with_bits.append(has)
        if has:
            header.append(col + "#bits")
    out = io.StringIO() if fh is None else fh
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for j in range(-1, tr.length):
        row = [str(j)]
        for (col, where, name, lp), has in zip(cols, with_bits):
            if where == "state":
                v = tr.states[j + 1].get(name)
            elif j < 0:
                v = None
            else:
                v = (tr.inputs[j] if where == "in" else tr.outputs[j]).get(name)
            if lp is not None and isinstance(v, dict):
                v = v.get(lp)
            row.append("" if v is None else format_value(v))
            if has:
                row.append("" if v is None else f"{v.bits:#x}")
        w.writerow(row)
    return out.getvalue() if fh is None else ""


def read_inputs_csv(text_or_fh, prog: Program, mode: str = MACHINE) -> list[dict]:
    """Input trace from CSV (``step`` column optional, one row per step)."""
    fh = io.StringIO(text_or_fh) if isinstance(text_or_fh, str) else text_or_fh
    rows = list(csv.DictReader(fh))
    steps = []
    for row in rows:
        if "step" in row and row["step"] is not None and row["step"].strip().startswith("-"):
            continue
        vals = {}
        for v in prog.root.inputs:
            if v.type.is_bus:
                d = {}
                for lp, lt in dtype_flatten(v.type, prog.tm.bus_types):
                    d[lp] = _cell(row, f"{v.name}.{lp}", lt, mode)
                vals[v.name] = d
            else:
                vals[v.name] = _cell(row, v.name, v.type, mode)
        steps.append(vals)
    return steps


def _cell(row: dict, col: str, t: DataType, mode: str):
    if mode == MACHINE and t.is_float and row.get(col + "#bits"):
        return FloatBits(t.base, int(row[col + "#bits"], 16))
    if col not in row or row[col] is None or row[col] == "":
        raise SimulationError(f"input column {col!r} missing or empty")
    return parse_cell(row[col], t, mode)
