import json
import re
from fractions import Fraction

import pytest

from blockcheck import bundled, encoder as En, engine as E, ir, simulator as sim, smtlib as S
from blockcheck.solver import SolverSession

from conftest import needs_solver, program, typed


def skeleton(text):
    """(command, name, arity) for every non-helper command of a script."""
    out = []
    for c in S.parse_sexprs(text):
        head = c[0]
        if head == "define-fun":
            if not re.match(r"(init|trans)_", c[1]):
                continue
            out.append((head, c[1], len(c[2])))
        elif head in ("declare-const", "declare-fun", "declare-sort"):
            out.append((head, c[1]))
        elif head == "assert":
            out.append((head, c[1][0], len(c[1])))
        else:
            out.append((head,))
    return out


@pytest.mark.parametrize("name", bundled.NAMES)
def test_modes_share_skeleton(name):
    p = program(name)
    assert skeleton(En.encode_text(p, "approx", 3)) == skeleton(En.encode_text(p, "exact", 3))


def test_encoding_is_deterministic():
    p = program("e5", "P2")
    assert En.encode_text(p, "exact", 4) == En.encode_text(program("e5", "P2"), "exact", 4)


def test_s1_exact_uses_fp_ops_and_bit_literal():
    text = En.encode_text(program("s1", "Q1"), "exact", 1)
    assert "(fp.add\n        RNE" in text and "fp.mul" in text
    assert "#b1100110011001100110011001100110011001100110011001101" in text


def test_s2_approx_has_child_then_parent_and_instrumentation():
    text = En.encode_text(program("s2", "P1"), "approx", 2)
    assert text.index("(define-fun trans_S1") < text.index("(define-fun trans_root")
    assert "(=> (= c curr_step) (not (= Switch 2)))" in text
    assert "(=> flag_kind (=> (< c curr_step) (= Switch 2)))" in text
    assert "(assert (trans_root 1 S1/Delay@0 S1/Delay@1 In1@1 S1/In1@1 S1/Out1@1))" in text
    assert "(assert (=> g_init (init_root S1/Delay@i)))" in text


def test_bus_sort_and_accessors():
    text = En.encode_text(program("s4"), "approx", 1)
    decls = [c for c in S.parse_sexprs(text) if c[0] in ("declare-sort", "declare-fun")]
    assert decls[0] == ["declare-sort", "BO", "0"]
    assert [d[1] for d in decls[1:]] == ["BO_e1", "BO_e2_1_1", "BO_e2_1_2", "BO_e2_2_1", "BO_e2_2_2"]
    assert decls[1][3] == "Int"
    exact = En.encode_text(program("s4"), "exact", 1)
    assert "(declare-fun BO_e1 (BO) (_ BitVec 32))" in exact
    assert "(declare-const Out1@0 BO)" in exact


def test_no_bus_no_sort():
    assert "declare-sort" not in En.encode_text(program("s2"), "exact", 1)


def test_enabled_wrapper_holds_output_and_state():
    text = En.encode_text(program("s3"), "approx", 1)
    names = re.findall(r"define-fun (\S+)", text)
    assert names.index("trans_One.body") < names.index("trans_One") < names.index("trans_$rate10")
    assert "(and (= Out1 $hold.Out1@0) (= $hold.Out1@1 $hold.Out1@0) (= Delay@1 Delay@0))" in text


def test_rate_wrapper_counter():
    text = En.encode_text(program("s3"), "approx", 1)
    assert "(= $rate10/$cnt@1 (ite (= $rate10/$cnt@0 9) 0 (+ $rate10/$cnt@0 1)))" in text
    assert "(= $rate10/$cnt@0 0)" in text


def test_stub_output_is_fresh_per_step():
    m = {"name": "stubbed", "system": {
        "blocks": [{"id": "In1", "type": "Inport", "params": {"port": 1}, "out_type": "double"},
                   {"id": "L", "type": "Lookup2D", "params": {"inputs": 1}, "out_type": "double"},
                   {"id": "Out1", "type": "Outport", "params": {"port": 1}}],
        "lines": [{"src": "In1/1", "dst": ["L/1"]}, {"src": "L/1", "dst": ["Out1/1"]}]}}
    prog = ir.lower(typed(m), None, False)
    assert prog.stubs == ["L"]
    text = S.print_script(En.encode_script(prog, "approx", 2))
    assert "(declare-const L@0 Real)" in text and "(declare-const L@1 Real)" in text


def test_steps_must_be_contiguous():
    sys_ = En.SystemEncoder(program("s1"), "approx")
    sys_.system()
    path = En.PathEncoder(sys_)
    path.step(0)
    with pytest.raises(En.EncodingError):
        path.step(2)


def _triggered():
    return {"name": "trig", "system": {
        "blocks": [{"id": "In1", "type": "Inport", "params": {"port": 1}, "out_type": "double"},
                   {"id": "T", "type": "SubSystem", "system": {
                       "blocks": [{"id": "Trigger", "type": "TriggerPort", "params": {"edge": "rising"}},
                                  {"id": "One", "type": "Constant", "params": {"value": 1}, "out_type": "int32"},
                                  {"id": "Add", "type": "Add", "params": {"signs": "++"}},
                                  {"id": "Delay", "type": "UnitDelay", "params": {"initial": 0}, "out_type": "int32"},
                                  {"id": "Out1", "type": "Outport", "params": {"port": 1}}],
                       "lines": [{"src": "One/1", "dst": ["Add/1"]}, {"src": "Delay/1", "dst": ["Add/2"]},
                                 {"src": "Add/1", "dst": ["Delay/1", "Out1/1"]}]}},
                   {"id": "Out1", "type": "Outport", "params": {"port": 1}}],
        "lines": [{"src": "In1/1", "dst": ["T/trigger"]}, {"src": "T/1", "dst": ["Out1/1"]}]}}


def test_rising_trigger_fires_on_edge_only():
    prog = ir.lower(typed(_triggered()), None, False)
    assert prog.element(("T",)).activation.kind == "triggered"
    inputs = [{"In1": sim.to_machine(x, prog.root.inputs[0].type)} for x in (0.0, 0.0, 1.0, 1.0, 0.0)]
    tr = sim.simulate(prog, inputs, 5)
    assert [o["Out1"] for o in tr.outputs] == [0, 0, 1, 1, 1]


@needs_solver
@pytest.mark.parametrize("mode,smode", [("exact", "machine"), ("approx", "ideal")])
def test_trigger_wrapper_agrees_with_simulator(mode, smode):
    prog = ir.lower(typed(_triggered()), None, False)
    ty = prog.root.inputs[0].type
    raw = (0.0, 0.0, 1.0, -1.0, 2.0)
    inputs = [{"In1": sim.to_machine(x, ty) if smode == "machine" else Fraction(x)} for x in raw]
    tr = sim.simulate(prog, inputs, 5, mode=smode)
    ag = E.Agreement(prog, mode, 5)
    try:
        assert ag.consistent(tr) == "sat"
        assert ag.deterministic(tr) == "unsat"
    finally:
        ag.close()


@needs_solver
@pytest.mark.parametrize("mode", ["approx", "exact"])
def test_instrumentation_polarity(mode):
    # not phi is unreachable at step 0 and reachable at step 6 from the initial state
    prog = program("s2", "P1")
    for k, want in ((1, "unsat"), (7, "sat")):
        with SolverSession() as s:
            s.submit(En.encode_script(prog, mode, k))
            assert s.check_sat().status == want


def test_golden_shape_parses():
    text = En.encode_text(program("s2", "P1"), "exact", 2)
    cmds = S.parse_sexprs(text)
    assert cmds[-1][0] == "check-sat-assuming"
    assert json.dumps(cmds)  # plain nested lists of strings
