import io
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from blockcheck import bundled, simulator as sim
from blockcheck.floats import FloatBits

from conftest import program

ONE = {"In1": Fraction(1)}


def ideal_ones(n):
    return [dict(ONE) for _ in range(n)]


def machine(prog, rows):
    return [{v.name: sim.to_machine(r[v.name], v.type, prog) for v in prog.root.inputs} for r in rows]


def test_s1_step_by_step():
    prog = program("s1")
    post, outs, _ = sim.step(prog, {"Delay": Fraction(0)}, ONE, mode="ideal")
    assert outs["Out1"] == 1 and post["Delay"] == 1
    post, outs, _ = sim.step(prog, post, ONE, mode="ideal")
    assert outs["Out1"] == Fraction(19, 10)


def test_s1_three_steps_ideal():
    tr = sim.simulate(program("s1"), ideal_ones(3), 3, mode="ideal")
    assert [o["Out1"] for o in tr.outputs] == [1, Fraction(19, 10), Fraction(271, 100)]


def test_s1_input_is_saturated():
    _, outs, env = sim.step(program("s1"), {"Delay": Fraction(0)}, {"In1": Fraction(5)}, mode="ideal")
    assert env["Saturation"] == 1 and outs["Out1"] == 1


def test_s1_machine_matches_host_doubles():
    prog = program("s1")
    tr = sim.simulate(prog, machine(prog, ideal_ones(20)), 20)
    o, expect = 0.0, []
    for _ in range(20):
        o = 1.0 + 0.9 * o
        expect.append(o)
    assert [float(x["Out1"]) for x in tr.outputs] == expect


def test_zero_steps():
    tr = sim.simulate(program("s2"), [], 0)
    assert tr.length == 0 and len(tr.states) == 1 and tr.violation is None


def test_short_input_trace_is_an_error():
    with pytest.raises(sim.SimulationError):
        sim.simulate(program("s1"), ideal_ones(2), 3, mode="ideal")


def test_s3_rate_child_active_at_multiples_of_ten():
    prog = program("s3")
    rows = machine(prog, [{"In1": Fraction(1)} for _ in range(25)])
    tr = sim.simulate(prog, rows, 25)
    steps = [j for j, a in enumerate(tr.active) if ("One",) in a]
    assert steps == [0, 10, 20]


def test_disabled_subsystem_holds_output_and_state():
    prog = program("s3")
    rows = machine(prog, [{"In1": Fraction(1)}] * 10 + [{"In1": Fraction(-1)}] * 15)
    tr = sim.simulate(prog, rows, 25)
    # enabled at 0 (counter 1), disabled at 10 and 20
    assert [tr.states[j + 1]["One/Delay"] for j in (0, 10, 20)] == [1, 1, 1]
    assert tr.signals[20]["One/Out1"] == tr.signals[0]["One/Out1"] == 1


def test_check_violation_on_s2():
    prog = program("s2", "P1")
    tr = sim.simulate(prog, machine(prog, ideal_ones(10)), 10)
    assert sim.check_violation(tr) == 6 == tr.violation


@pytest.mark.parametrize("expr,want", [("true", None), ("false", 0)])
def test_check_violation_constants(expr, want):
    prog = program("s2", expr=expr)
    tr = sim.simulate(prog, ideal_ones(4), 4, mode="ideal")
    assert sim.check_violation(tr) == want


def test_machine_equals_ideal_on_representable_model():
    # the E2 filter uses binary gains and the inputs are multiples of 1/4
    prog = program("e2")
    rng = random.Random(5)
    rows = [{"In1": Fraction(rng.randint(-8, 8), 4)} for _ in range(30)]
    a = sim.simulate(prog, rows, mode="ideal")
    b = sim.simulate(prog, machine(prog, rows), mode="machine")
    for x, y in zip(a.outputs, b.outputs):
        assert {k: Fraction(v) if isinstance(v, bool) else v for k, v in x.items()} == \
            {k: v.to_fraction() if isinstance(v, FloatBits) else v for k, v in y.items()}


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(bundled.NAMES), st.sampled_from(["machine", "ideal"]), st.integers(0, 2 ** 32))
def test_simulation_is_deterministic(name, mode, seed):
    prog = program(name)
    rows = sim.random_inputs(prog, 15, random.Random(seed), mode)
    a = sim.simulate(prog, rows, mode=mode)
    b = sim.simulate(prog, rows, mode=mode)
    assert a.states == b.states and a.signals == b.signals


def test_uint8_counter_wraps_in_machine_mode_only():
    prog = program("e4_300", "P1")
    rows = [{}] * 30
    assert sim.simulate(prog, rows, mode="machine").violation is None
    assert sim.simulate(prog, rows, mode="ideal").violation == 27
    assert sim.simulate(program("e4_200", "P1"), rows, mode="machine").violation == 8


@pytest.mark.parametrize("mode", ["machine", "ideal"])
def test_csv_round_trip(mode):
    prog = program("s4")
    rows = sim.random_inputs(prog, 5, random.Random(2), mode)
    tr = sim.simulate(prog, rows, mode=mode)
    text = sim.write_trace_csv(tr, prog)
    header = text.splitlines()[0].split(",")
    assert header[0] == "step" and text.splitlines()[1].startswith("-1,")
    assert sim.read_inputs_csv(io.StringIO(text), prog, mode) == tr.inputs


def test_machine_csv_has_bits_column():
    prog = program("s1")
    tr = sim.simulate(prog, machine(prog, ideal_ones(2)), 2)
    lines = sim.write_trace_csv(tr, prog).splitlines()
    assert "Out1#bits" in lines[0].split(",")
    assert "0x3ff0000000000000" in lines[2]
