"""Model-checking procedures: BMC, k-induction and the level/bound controller.

A *level* is one element of the chain from the property's subsystem up to
the root.  Proving the property on a lower level proves it for every
enclosing one, since the element's behaviour inside its parent is one of
its free-input behaviours.  Counterexamples are only reported from the
root, where the initial-state predicate and inputs are the real ones.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction

from . import simulator as sim
from . import smtlib as S
from .bounds import Bounds
from .core import DataType, Trace, dtype_flatten, wrap_int
from .encoder import APPROX, EXACT, PathEncoder, SystemEncoder
from .ir import Program, SubsystemIR
from .solver import CallCounter, SolverError, SolverSession

VALID, FALSIFIED, UNKNOWN = "valid", "falsified", "unknown"
CANDIDATE_NOTE = "candidate counterexample (approximate)"


@dataclass
class Config:
    mode: str | None = EXACT  # None with engine=auto: approx BMC next to exact BMC and k-induction
    engine: str = "auto"  # bmc | kind | auto
    max_k: int = 64
    factor: int = 2
    timeout: float | None = 300.0  # per solver call, seconds
    budget: float | None = None  # whole run, seconds
    solver: str | None = None
    transcripts: str | None = None  # directory for .smt2 transcripts
    bounds: bool = True  # skip path queries the interval pre-analysis refutes

    def __post_init__(self):
        if self.max_k < 1:
            raise ValueError("max_k must be >= 1")
        if self.factor < 2:
            raise ValueError("k-schedule factor must be >= 2")
        if self.mode not in (APPROX, EXACT) and not (self.mode is None and self.engine == "auto"):
            raise ValueError(f"unknown encoding {self.mode!r}")
        if self.engine not in ("bmc", "kind", "auto"):
            raise ValueError(f"unknown engine {self.engine!r}")


@dataclass
class Verdict:
    status: str  # valid | falsified | unknown
    mode: str
    engine: str
    d: int | None = None  # level that closed the proof (1 = the property's own subsystem)
    level: str | None = None  # element path of that level
    k: int | None = None
    violation_step: int | None = None
    trace: Trace | None = None
    validated: bool | None = None
    candidate: bool = False
    reason: str = ""
    replay: dict = field(default_factory=dict)  # sim mode -> violation step (or None)
    solver_calls: int = 0
    calls_by_level: dict = field(default_factory=dict)
    static_steps: int = 0  # path queries answered by the interval pre-analysis
    wall_time_s: float = 0.0

    @property
    def conclusive(self) -> bool:
        return self.status == VALID or (self.status == FALSIFIED and bool(self.validated))


class Cancelled(Exception):
    pass


# ---------------------------------------------------------------------------
# levels


class Level:
    """Solver session plus incrementally encoded path for one top element."""

    def __init__(self, prog: Program, top: SubsystemIR, mode: str, cfg: Config, counter: CallCounter,
                 tag: str = ""):
        self.prog = prog
        self.top = top
        self.mode = mode
        self.cfg = cfg
        self.counter = counter
        self.tag = tag
        self.sys = SystemEncoder(prog, mode)
        self._system = self.sys.system(top)
        self.path = PathEncoder(self.sys, top)
        self.session: SolverSession | None = None
        self.next_j = 0  # first step not yet processed by k-induction
        self.refuted = False  # base case failed below the root
        self.static = 0
        self._bounds = None
        if cfg.bounds:
            try:
                self._bounds = Bounds(prog, mode, top)
            except (ValueError, KeyError, sim.SimulationError):
                self._bounds = None

    def cannot_fail(self, j: int) -> bool:
        """True when intervals show no violation at step ``j`` from an initial state."""
        if self._bounds is None:
            return False
        try:
            ok = not self._bounds.may_fail(j)
        except (ValueError, KeyError, TypeError, ZeroDivisionError, sim.SimulationError):
            self._bounds = None
            return False
        if ok:
            self.static += 1
        return ok

    def open(self) -> SolverSession:
        if self.session is None:
            tpath = None
            if self.cfg.transcripts:
                os.makedirs(self.cfg.transcripts, exist_ok=True)
                name = (self.top.name or "root").replace("/", "_").replace("$", "")
                tpath = os.path.join(self.cfg.transcripts, f"{self.tag}{name}.{self.mode}.smt2")
            self.session = SolverSession(self.cfg.solver, self.cfg.timeout, tpath, self.counter)
            self.session.submit(self._system)
            self.session.submit(self.path.init_guard())
        return self.session

    def ensure_steps(self, n: int):
        s = self.open()
        while self.path.steps < n:
            s.submit(self.path.step(self.path.steps))

    @property
    def calls(self) -> int:
        return self.session.calls if self.session else 0

    def close(self):
        if self.session is not None:
            self.session.close(force=True)


def _check(level: Level, lits, cancel: threading.Event | None):
    if cancel is not None and cancel.is_set():
        raise Cancelled
    try:
        return level.open().check_sat_assuming(lits)
    except SolverError:
        if cancel is not None and cancel.is_set():
            raise Cancelled from None
        raise


# ---------------------------------------------------------------------------
# counterexamples


def _solver_value(v, t: DataType, mode: str):
    if t.is_bool:
        return bool(v)
    if mode == EXACT and t.is_int:
        return wrap_int(v, t)
    if mode == APPROX and t.is_float:
        return Fraction(v)
    return v


def extract_trace(level: Level, n: int) -> tuple[Trace, list[dict]]:
    """Values of an ``n``-step path from the last sat answer.

    Returns the trace (states, inputs, outputs, all signals) and the
    per-step values of stub outputs.
    """
    path = level.path
    ops = level.sys.ops
    queries = []  # (term, key, leaf, type)
    for role, sym, t, key in path.symbols(n):
        if t.is_bus:
            for leaf, acc in ops.accessors(t.bus_name):
                lt = dict(dtype_flatten(t, level.prog.tm.bus_types))[leaf]
                queries.append((acc(sym), role, key, leaf, lt))
        else:
            queries.append((sym, role, key, None, t))
    values = level.session.get_values([q[0] for q in queries])
    tr = Trace(states=[{} for _ in range(n + 1)])
    tr.inputs = [{} for _ in range(n)]
    tr.outputs = [{} for _ in range(n)]
    tr.signals = [{} for _ in range(n)]
    for term, role, (j, name), leaf, t in queries:
        v = _solver_value(values[S.print_term(term)], t, level.mode)
        if role == "state":
            target = tr.states[j + 1]
        else:
            target = tr.signals[j]
        if leaf is not None:
            target = target.setdefault(name, {})
            target[leaf] = v
        else:
            target[name] = v
    for j in range(n):
        for v in path.inputs:
            tr.inputs[j][v.name] = tr.signals[j][v.name]
        for v in path.outputs:
            tr.outputs[j][v.name] = tr.signals[j][v.name]
    stubs = {v.name for v in sim._stub_vars(level.prog)}
    aux = [{k: x for k, x in sig.items() if k in stubs} for sig in tr.signals]
    return tr, aux


def validate(prog: Program, mode: str, tr: Trace, aux: list[dict], j: int) -> tuple[bool, dict, Trace]:
    """Replay a solver trace in the simulator.

    Exact traces replay in machine arithmetic.  Approximate traces replay
    in ideal arithmetic and, after rounding inputs to machine values, in
    machine arithmetic; only the latter validates.
    """
    n = j + 1
    replay = {}
    if mode == APPROX:
        itr = sim.simulate(prog, tr.inputs, n, mode=sim.IDEAL, aux=aux or None)
        replay["ideal"] = itr.violation
        types = {v.name: v.type for v in prog.root.inputs}
        stypes = {v.name: v.type for v in sim._stub_vars(prog)}
        minputs = [{k: sim.to_machine(x, types[k], prog) for k, x in row.items()} for row in tr.inputs]
        maux = [{k: sim.to_machine(x, stypes[k], prog) for k, x in row.items()} for row in aux]
        try:
            mtr = sim.simulate(prog, minputs, n, mode=sim.MACHINE, aux=maux or None)
            replay["machine"] = mtr.violation
        except sim.SimulationError:
            replay["machine"] = None
            return False, replay, itr
        ok = len(mtr.holds) > j and mtr.holds[j] is False
        return ok, replay, (mtr if ok else itr)
    mtr = sim.simulate(prog, tr.inputs, n, mode=sim.MACHINE, aux=aux or None)
    replay["machine"] = mtr.violation
    ok = len(mtr.holds) > j and mtr.holds[j] is False
    return ok, replay, mtr


def _falsified(level: Level, j: int, engine: str, k: int | None, d: int | None) -> Verdict:
    prog = level.prog
    tr, aux = extract_trace(level, j + 1)
    try:
        ok, replay, rtr = validate(prog, level.mode, tr, aux, j)
    except sim.SimulationError as exc:
        ok, replay, rtr = False, {"error": str(exc)}, tr
    v = Verdict(FALSIFIED, level.mode, engine, d=d, level=level.top.name, k=k, violation_step=j, trace=rtr,
                validated=ok, replay=replay)
    if prog.stubs:
        v.status = UNKNOWN
        v.reason = "stub-limited: counterexample depends on unconstrained stubbed blocks " + ", ".join(prog.stubs)
        v.validated = False
    elif not ok:
        v.candidate = level.mode == APPROX
        v.reason = CANDIDATE_NOTE if level.mode == APPROX else "solver trace does not replay in the simulator"
    return v


# ---------------------------------------------------------------------------
# procedures


def _deadline(cfg: Config, start: float):
    return start + cfg.budget if cfg.budget else None


def bmc(prog: Program, cfg: Config, mode: str | None = None, counter: CallCounter | None = None,
        cancel: threading.Event | None = None, max_k: int | None = None) -> Verdict:
    """Search root paths of length 1..max_k for a violation."""
    mode = mode or cfg.mode or EXACT
    counter = counter or CallCounter()
    start = time.monotonic()
    limit = _deadline(cfg, start)
    level = Level(prog, prog.root, mode, cfg, counter, tag="bmc.")
    kmax = max_k or cfg.max_k
    try:
        flag = level.sys.flag_kind
        for j in range(kmax):
            if limit and time.monotonic() > limit:
                return _finish(Verdict(UNKNOWN, mode, "bmc", k=j, reason="time budget exhausted"), start, [level])
            if level.cannot_fail(j):
                continue
            level.ensure_steps(j + 1)
            r = _check(level, [level.path.init_literal(), level.path.step_guard(j), S.not_(flag)], cancel)
            if r.is_sat:
                return _finish(_falsified(level, j, "bmc", j + 1, len(prog.chain())), start, [level])
            if not r.is_unsat:
                return _finish(Verdict(UNKNOWN, mode, "bmc", k=j + 1, reason=f"solver: {r.reason}"), start, [level])
        return _finish(Verdict(UNKNOWN, mode, "bmc", k=kmax, reason="max-k reached"), start, [level])
    finally:
        level.close()


def kinduction(level: Level, k: int, is_top: bool, cancel: threading.Event | None = None):
    """One round of k-induction on a level, resuming where the last round stopped.

    Returns ("true", j+1) | ("false", j) | ("maybe", reason).
    """
    if k < 2:
        raise ValueError("k-induction needs k >= 2")
    flag = level.sys.flag_kind
    path = level.path
    while level.next_j < k:
        j = level.next_j
        level.ensure_steps(j + 1)
        if j > 0:
            r = _check(level, [path.step_guard(j), flag], cancel)
            if r.is_unsat:
                return "true", j + 1
            if not r.is_sat:
                return "maybe", f"solver: {r.reason}"
        if level.cannot_fail(j):
            level.next_j = j + 1
            continue
        r = _check(level, [path.init_literal(), path.step_guard(j), S.not_(flag)], cancel)
        if r.is_sat:
            if is_top:
                return "false", j
            level.refuted = True
            return "maybe", "base case fails for the subsystem alone"
        if not r.is_unsat:
            return "maybe", f"solver: {r.reason}"
        level.next_j = j + 1
    return "maybe", "k exhausted"


def schedule(cfg: Config) -> list[int]:
    ks, k = [], 1
    while True:
        ks.append(min(k, cfg.max_k))
        if k >= cfg.max_k:
            return ks
        k *= cfg.factor


def check_kind(prog: Program, cfg: Config, mode: str | None = None, counter: CallCounter | None = None,
               cancel: threading.Event | None = None) -> Verdict:
    """The level/bound controller around k-induction."""
    mode = mode or cfg.mode or EXACT
    counter = counter or CallCounter()
    start = time.monotonic()
    limit = _deadline(cfg, start)
    chain = prog.chain()
    levels: list[Level | None] = [None] * len(chain)
    last_reason = "max-k reached"
    try:
        for k in schedule(cfg):
            kk = max(k, 2)
            for d, e in enumerate(chain, 1):
                if limit and time.monotonic() > limit:
                    return _finish(Verdict(UNKNOWN, mode, "kind", k=kk, reason="time budget exhausted"), start, levels)
                if levels[d - 1] is None:
                    levels[d - 1] = Level(prog, e, mode, cfg, counter, tag=f"kind.d{d}.")
                lv = levels[d - 1]
                if lv.refuted:
                    continue
                is_top = e is prog.root
                res, info = kinduction(lv, kk, is_top, cancel)
                if res == "true":
                    return _finish(Verdict(VALID, mode, "kind", d=d, level=e.name, k=info), start, levels)
                if res == "false":
                    return _finish(_falsified(lv, info, "kind", info + 1, d), start, levels)
                if info.startswith("solver"):
                    last_reason = info
        if any(lv is not None and lv.refuted for lv in levels) and prog.stubs:
            last_reason = "stub-limited"
        return _finish(Verdict(UNKNOWN, mode, "kind", k=max(cfg.max_k, 2), reason=last_reason), start, levels)
    finally:
        for lv in levels:
            if lv is not None:
                lv.close()


def _finish(v: Verdict, start: float, levels) -> Verdict:
    v.wall_time_s = time.monotonic() - start
    for lv in levels:
        if lv is not None:
            key = f"{lv.tag}{lv.top.name or '<root>'}"
            v.calls_by_level[key] = lv.calls
            v.solver_calls += lv.calls
            v.static_steps += lv.static
    return v


def check_auto(prog: Program, cfg: Config) -> Verdict:
    """Approximate BMC, exact BMC and exact k-induction in parallel.

    The first conclusive verdict (a proof, or a counterexample that replays
    in machine arithmetic) wins and the other runs are cancelled.
    """
    start = time.monotonic()
    cancel = threading.Event()
    counter = CallCounter()
    results: list[Verdict] = []
    errors: list[BaseException] = []
    lock = threading.Condition()

    def run(fn, mode):
        try:
            v = fn(prog, cfg, mode=mode, counter=counter, cancel=cancel)
        except Cancelled:
            return
        except BaseException as exc:  # reported after the join
            with lock:
                errors.append(exc)
                lock.notify_all()
            return
        with lock:
            results.append(v)
            lock.notify_all()

    if cfg.mode is None:
        jobs = [(bmc, APPROX), (bmc, EXACT), (check_kind, EXACT)]
    else:
        jobs = [(bmc, cfg.mode), (check_kind, cfg.mode)]
    threads = [threading.Thread(target=run, args=job, daemon=True) for job in jobs]
    for t in threads:
        t.start()
    winner = None
    with lock:
        while True:
            winner = next((v for v in results if v.conclusive), None)
            if winner is not None or len(results) + len(errors) == len(jobs):
                break
            lock.wait(0.5)
    cancel.set()
    for t in threads:
        t.join()
    if winner is None:
        if errors and not results:
            raise errors[0]
        # prefer an exact answer, then anything with a trace
        pool = sorted(results, key=lambda v: (v.mode != EXACT, v.trace is None))
        winner = pool[0]
        winner.reason = winner.reason or "no conclusive verdict"
    winner.engine = f"auto:{winner.engine}"
    winner.solver_calls = counter.value
    winner.wall_time_s = time.monotonic() - start
    return winner


def check(prog: Program, cfg: Config) -> Verdict:
    if prog.prop is None:
        raise ValueError("no property to check")
    if cfg.engine == "bmc":
        return bmc(prog, cfg)
    if cfg.engine == "kind":
        return check_kind(prog, cfg)
    return check_auto(prog, cfg)


# ---------------------------------------------------------------------------
# reports


REPORT_SCHEMA = "blockcheck-report/1"


def report(v: Verdict, prog: Program, cfg: Config, artifacts: dict | None = None) -> dict:
    from . import __version__

    out = {
        "schema": REPORT_SCHEMA,
        "tool_version": __version__,
        "model": prog.tm.model.name,
        "property": prog.prop.id if prog.prop else None,
        "scope": prog.prop.scope_str if prog.prop else None,
        "verdict": v.status,
        "mode": v.mode,
        "engine": v.engine,
        "d": v.d,
        "level": v.level,
        "k": v.k,
        "violation_step": v.violation_step,
        "validated": v.validated,
        "candidate": v.candidate,
        "reason": v.reason,
        "replay": v.replay,
        "wall_time_s": round(v.wall_time_s, 3),
        "solver_calls": v.solver_calls,
        "calls_by_level": v.calls_by_level,
        "static_steps": v.static_steps,
        "block_count": prog.block_count,
        "sliced": prog.sliced,
        "stubs": prog.stubs,
        "config": {"encoding": cfg.mode or "mixed", "engine": cfg.engine, "max_k": cfg.max_k, "factor": cfg.factor,
                   "timeout": cfg.timeout, "budget": cfg.budget},
        "artifacts": artifacts or {},
    }
    return out


def exit_code(v: Verdict) -> int:
    if v.status == VALID:
        return 0
    if v.status == FALSIFIED and v.validated:
        return 1
    return 2


# ---------------------------------------------------------------------------
# encoder/simulator agreement


class Agreement:
    """Pins simulated traces onto an encoded path and asks the solver.

    ``consistent(trace)`` must be sat (the trace satisfies the step
    constraints); ``deterministic(trace)`` pins only inputs, stub outputs
    and the initial state, asks for a different output or state and must
    be unsat.

    Pins are asserted inside a push/pop scope rather than assumed: the
    solver then substitutes the constants and folds the arithmetic, which
    keeps exact-mode checks cheap.
    """

    def __init__(self, prog: Program, mode: str, n: int, cfg: Config | None = None):
        self.prog = prog
        self.mode = mode
        self.n = n
        cfg = cfg or Config(mode=mode, timeout=None)
        self.level = Level(prog, prog.root, mode, cfg, CallCounter(), tag="agree.")
        self.level.ensure_steps(n)

    def _scoped(self, terms) -> str:
        lv = self.level
        fixed = [lv.path.init_literal(), S.app("=", lv.sys.curr_step, S.int_lit(-1)), S.not_(lv.sys.flag_kind)]
        s = lv.session
        s.submit(["(push 1)"] + [S.assert_(t) for t in fixed + list(terms)])
        try:
            return s.check_sat().status
        finally:
            s.submit(["(pop 1)"])

    def consistent(self, trace: Trace) -> str:
        return self._scoped(self.level.path.pin_trace(trace))

    def deterministic(self, trace: Trace) -> str:
        path = self.level.path
        pins = []
        for s in path.state_vars:
            pins += path.pin(path.state_sym(s, -1), trace.states[0][s.name], s.type)
        stubs = {v.name for v in sim._stub_vars(self.prog)}
        diffs = []
        for j in range(trace.length):
            sig = trace.signals[j]
            for v in path.inputs:
                pins += path.pin(path.sym(v.name, v.type, j), sig[v.name], v.type)
            for v in path.aux:
                if v.name in stubs:
                    pins += path.pin(path.sym(v.name, v.type, j), sig[v.name], v.type)
            for v in path.outputs:
                diffs += [S.not_(t) for t in path.pin(path.sym(v.name, v.type, j), sig[v.name], v.type)]
            for s in path.state_vars:
                diffs += [S.not_(t) for t in path.pin(path.state_sym(s, j), trace.states[j + 1][s.name], s.type)]
        if not diffs:
            return "unsat"
        pins.append(S.app("or", *diffs) if len(diffs) > 1 else diffs[0])
        return self._scoped(pins)

    def close(self):
        self.level.close()
