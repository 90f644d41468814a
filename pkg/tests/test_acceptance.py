"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints (see
conftest.py).  Run this file alone with ``pytest tests/test_acceptance.py``.
"""

import random
import time
from fractions import Fraction

import pytest

from blockcheck import bundled, engine as E, frontend as F, ir, simulator as sim, smtlib as S
from blockcheck.cli import main as cli_main
from blockcheck.floats import FloatBits

from conftest import GOLDEN, needs_solver, program, with_threshold

MODES = ("approx", "exact")
RESULTS: dict[int, tuple[bool, str]] = {}


class Criterion:
    """Context manager that files the outcome of one criterion."""

    def __init__(self, n: int):
        self.n = n
        self.notes: list[str] = []

    def note(self, text: str):
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, etype, exc, tb):
        detail = "; ".join(self.notes)
        if etype is not None:
            detail = f"{detail}; {etype.__name__}: {exc}".lstrip("; ")
        RESULTS[self.n] = (etype is None, detail)
        return False


def timed(fn, *args):
    t = time.monotonic()
    out = fn(*args)
    return out, time.monotonic() - t


def run(prog, mode, engine, max_k=64):
    return timed(E.check, prog, E.Config(mode=mode, engine=engine, max_k=max_k, timeout=300))


def j_star(th) -> int:
    """First step at which the partial sum of 0.9^m exceeds th (exact rationals)."""
    total, j = Fraction(0), 0
    while True:
        total += Fraction(9, 10) ** j
        if total > Fraction(th):
            return j
        j += 1


@needs_solver
def test_criterion_1_e1_falsification_depth():
    with Criterion(1) as c:
        prog = program("e1", "P1")
        for mode in MODES:
            v, t = run(prog, mode, "bmc")
            c.note(f"{mode}: step {v.violation_step} k {v.k} validated {v.validated} {t:.1f}s")
            assert (v.status, v.violation_step, v.k) == ("falsified", 6, 7)
            assert v.validated is True
            assert t < 30


SWEEP = [0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 7.5]


@needs_solver
def test_criterion_2_threshold_sweep():
    with Criterion(2) as c:
        assert [j_star(th) for th in SWEEP] == [0, 1, 2, 4, 5, 7, 13]
        for th in SWEEP:
            tm = with_threshold(th)
            prog = ir.lower(tm, F.make_property("P1", "", "sig(Switch/1) == 2", tm), True)
            got = []
            for mode in MODES:
                v, t = run(prog, mode, "bmc")
                got.append(f"{mode} {v.violation_step} ({t:.1f}s)")
                assert v.status == "falsified" and v.violation_step == j_star(th), (th, mode)
                assert v.validated is True, (th, mode)
                assert t < 60, (th, mode, t)
            c.note(f"th={th}: " + ", ".join(got))


@needs_solver
def test_criterion_3_kinduction_proof():
    with Criterion(3) as c:
        prog = program("s1", "Q1")
        for mode in MODES:
            v, t = run(prog, mode, "kind")
            c.note(f"{mode}: {v.status} k {v.k} d {v.d} {t:.1f}s")
            assert v.status == "valid" and v.k <= 2 and v.d == 1
            assert t < 10


@needs_solver
def test_criterion_4_locality():
    with Criterion(4) as c:
        prog = program("s2", "Q1")
        assert prog.prop.scope == ("S1",)
        for mode in MODES:
            v, _ = run(prog, mode, "kind")
            root_calls = sum(n for key, n in v.calls_by_level.items() if key.endswith("<root>"))
            c.note(f"{mode}: {v.status} d {v.d} root calls {root_calls} levels {sorted(v.calls_by_level)}")
            assert v.status == "valid" and v.d == 1 and v.level == "S1"
            assert root_calls == 0


POINT_NINE = "(fp #b0 #b01111111110 #b1100110011001100110011001100110011001100110011001101)"
LAYOUT = {"half": (16, 5), "single": (32, 8), "double": (64, 11)}


def test_criterion_5_literal_fidelity():
    with Criterion(5) as c:
        assert S.print_fp_literal(FloatBits.from_float(0.9).bits, "double") == POINT_NINE
        rng = random.Random(2024)
        checked = 0
        for prec, (w, eb) in LAYOUT.items():
            top = ((1 << eb) - 1) << (w - eb - 1)
            sign = 1 << (w - 1)
            specials = [0, sign, top, top | sign, top | 1, top | (1 << (w - eb - 2)), sign | top | 1]
            patterns = specials + [rng.getrandbits(w) for _ in range(3334)]
            for bits in patterns:
                text = S.print_fp_literal(bits, prec)
                assert S.parse_value(text, S.float_sort(prec)).bits == bits, (prec, hex(bits))
                checked += 1
        c.note(f"0.9 literal matches; {checked} patterns round-trip")
        assert checked >= 10 ** 4


def _oracle_depth(name, mode, n=64):
    prog = program(name, "P1")
    return sim.simulate(prog, [{}] * n, n, mode=mode).violation


@needs_solver
def test_criterion_6_overflow_semantics():
    with Criterion(6) as c:
        want = _oracle_depth("e4_200", "machine")
        assert want == 8 == _oracle_depth("e4_200", "ideal")
        v, t = run(program("e4_200", "P1"), "exact", "bmc")
        c.note(f"th=200 exact bmc step {v.violation_step} (oracle {want}) validated {v.validated} {t:.1f}s")
        assert v.status == "falsified" and v.violation_step == want and v.validated is True
        assert t < 300

        assert _oracle_depth("e4_300", "machine") is None
        ideal = _oracle_depth("e4_300", "ideal")
        v, t = run(program("e4_300", "P1"), "exact", "kind")
        c.note(f"th=300 exact {v.status} k {v.k} d {v.d} {t:.1f}s")
        assert v.status == "valid" and t < 300
        v, t = run(program("e4_300", "P1"), "approx", "bmc")
        c.note(f"th=300 approx {v.status} step {v.violation_step} (ideal oracle {ideal}) "
               f"candidate {v.candidate} {t:.1f}s")
        assert v.status == "falsified" and v.violation_step == ideal == 27
        assert v.candidate and not v.validated
        assert t < 300


@needs_solver
@pytest.mark.slow
def test_criterion_7_encoder_simulator_agreement():
    with Criterion(7) as c:
        start = time.monotonic()
        for name in bundled.NAMES:
            prog = ir.lower(bundled.load(name), None, False)
            for mode, smode in (("exact", "machine"), ("approx", "ideal")):
                t = time.monotonic()
                ag = E.Agreement(prog, mode, 50)
                try:
                    rng = random.Random(f"{name}-{mode}")
                    tr = None
                    for _ in range(100):
                        tr = sim.simulate(prog, sim.random_inputs(prog, 50, rng, smode), 50, mode=smode)
                        assert ag.consistent(tr) == "sat", (name, mode)
                    assert ag.deterministic(tr) == "unsat", (name, mode)
                finally:
                    ag.close()
                c.note(f"{name}/{mode} {time.monotonic() - t:.0f}s")
        total = time.monotonic() - start
        c.note(f"total {total:.0f}s")
        assert total < 15 * 60


SLICED = {
    ("s1", "P1"): 5, ("s1", "Q1"): 5, ("s2", "P1"): 11, ("s2", "Q1"): 7, ("s3", "P1"): 11, ("s3", "Q1"): 9,
    ("s4", "P1"): 3, ("s4", "Q1"): 3, ("s4", "Q2"): 4, ("e1", "P1"): 11, ("e1", "Q1"): 7,
    ("e2", "P1"): 10, ("e2", "Q1"): 9, ("e2", "Q2"): 11, ("e3", "P1"): 15, ("e3", "Q1"): 14,
    ("e4_200", "P1"): 37, ("e4_300", "P1"): 37, ("e5", "P1"): 13, ("e5", "P2"): 25, ("e5", "Q1"): 11,
}


@needs_solver
@pytest.mark.slow
def test_criterion_8_slicing_soundness():
    with Criterion(8) as c:
        keys = [(n, p.id) for n in bundled.NAMES for p in bundled.properties(n)]
        assert sorted(keys) == sorted(SLICED)
        for key in keys:
            on, off = program(*key, slicing=True), program(*key, slicing=False)
            assert on.block_count == SLICED[key], key
            cfg = E.Config(mode="exact", engine="auto", max_k=40, timeout=300)
            a, b = E.check(on, cfg), E.check(off, cfg)
            c.note(f"{key[0]}.{key[1]} {a.status}/{b.status} {on.block_count}/{off.block_count}")
            assert (a.status, a.violation_step) == (b.status, b.violation_step), key
            assert a.status in ("valid", "falsified"), key


@needs_solver
def test_criterion_9_counterexample_validation():
    with Criterion(9) as c:
        # the validated flags of criteria 1, 2 and 6 are asserted there; this is the boundary case
        prog = program("s2", expr="sig(S1/1) != 5.6953279")
        v, _ = run(prog, "approx", "bmc")
        c.note(f"boundary approx: {v.status} step {v.violation_step} validated {v.validated} "
               f"candidate {v.candidate} replay {v.replay}")
        assert v.status == "falsified" and v.violation_step == 7
        assert v.validated is False and v.candidate is True
        assert v.reason == "candidate counterexample (approximate)"
        assert v.replay == {"ideal": 7, "machine": None}
        assert E.exit_code(v) == 2
        for name, pid, mode, step in (("s2", "P1", "exact", 6), ("s2", "P1", "approx", 6),
                                      ("e4_200", "P1", "exact", 8)):
            v, _ = run(program(name, pid), mode, "bmc")
            replay = sim.simulate(program(name, pid), v.trace.inputs, step + 1).violation
            assert v.validated and replay == step, (name, mode)
        c.note("validated traces replay to their reported step")


GOLDEN_CASES = [("s1", "Q1", "approx"), ("s1", "Q1", "exact"), ("s2", "P1", "approx"), ("s2", "P1", "exact")]


def test_criterion_10_golden_encoding(tmp_path):
    with Criterion(10) as c:
        for name, pid, mode in GOLDEN_CASES:
            out = tmp_path / f"{name}.{pid}.{mode}.smt2"
            code = cli_main(["encode", "--model", str(bundled.model_path(name)), "--prop",
                             str(bundled.props_path(name)), "--prop-id", pid, "--encoding", mode, "-k", "2",
                             "--out", str(out)])
            assert code == 0
            assert out.read_bytes() == (GOLDEN / f"{name}.{pid}.{mode}.k2.smt2").read_bytes(), out.name
            c.note(f"{out.name} identical")
