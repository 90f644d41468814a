import pytest

from blockcheck import bundled, frontend as F, ir
from blockcheck.core import ModelError

from conftest import model_dict, program, typed

SLICED_COUNTS = {
    ("s1", "P1"): 5, ("s1", "Q1"): 5,
    ("s2", "P1"): 11, ("s2", "Q1"): 7,
    ("s3", "P1"): 11, ("s3", "Q1"): 9,
    ("s4", "P1"): 3, ("s4", "Q1"): 3, ("s4", "Q2"): 4,
    ("e1", "P1"): 11, ("e1", "Q1"): 7,
    ("e2", "P1"): 10, ("e2", "Q1"): 9, ("e2", "Q2"): 11,
    ("e3", "P1"): 15, ("e3", "Q1"): 14,
    ("e4_200", "P1"): 37, ("e4_300", "P1"): 37,
    ("e5", "P1"): 13, ("e5", "P2"): 25, ("e5", "Q1"): 11,
}
FULL_COUNTS = {"s1": 6, "s2": 12, "s3": 12, "s4": 4, "e1": 12, "e2": 13, "e3": 18,
               "e4_200": 45, "e4_300": 45, "e5": 28}


def test_s1_tables():
    root = program("s1").root
    assert [v.name for v in root.inputs] == ["In1"]
    assert [v.name for v in root.outputs] == ["Out1"]
    (s,) = root.all_states
    assert s.name == "Delay" and s.init.attr == 0
    eqs = {(e.kind, e.target): str(e.expr) for e in root.equations}
    assert eqs[("def", "Saturation")] == "(saturate 1:double -1:double In1)"
    assert eqs[("def", "Gain")] == "(mul 9/10:double Delay@0)"
    assert eqs[("def", "Add")] == "(add Saturation Gain)"
    assert eqs[("next", "Delay")] == "Add"
    assert eqs[("out", "Out1")] == "Add"


def test_s2_inherits_child_state():
    root = program("s2").root
    assert [c.name for c in root.children] == ["S1"]
    assert [s.name for s in root.all_states] == ["S1/Delay"]


@pytest.mark.parametrize("name", bundled.NAMES)
def test_equation_order_defines_before_use(name):
    for e in program(name).root.walk():
        known = {v.name for v in e.inputs} | ({e.control.name} if e.control else set())
        known |= {s.name for s in e.all_states} | {e.rel(s.name) for s in e.all_states}
        known |= {v.name for v in e.own_aux}
        for eq in e.equations:
            assert eq.reads() <= known, (e.name, eq)
            known |= eq.defines()
        assert {v.name for v in e.outputs} <= known


@pytest.mark.parametrize("name", bundled.NAMES)
def test_state_inheritance(name):
    for e in program(name).root.walk():
        expect = [s.name for s in e.own_states]
        for c in e.children:
            expect += [s.name for s in c.all_states]
        expect += [s.name for s in e.wrapper_states]
        assert [s.name for s in e.all_states] == expect
        assert len(set(expect)) == len(expect)


@pytest.mark.parametrize("name", bundled.NAMES)
def test_block_links_are_symmetric(name):
    bt = program(name).bt
    for r in bt.records:
        for port, (src, out) in r.preds.items():
            assert (r.index, port) in bt[src].succs[out]
        for out, dsts in r.succs.items():
            for dst, port in dsts:
                assert bt[dst].preds[port] == (r.index, out)


@pytest.mark.parametrize("key", sorted(SLICED_COUNTS))
def test_golden_block_counts(key):
    name, pid = key
    assert program(name, pid).block_count == SLICED_COUNTS[key]
    assert program(name, pid, slicing=False).block_count == FULL_COUNTS[name]


def test_slicing_drops_dangling_chain():
    m = model_dict("s2")
    m["system"]["blocks"] += [{"id": "Extra", "type": "Constant", "params": {"value": 3}},
                              {"id": "Out9", "type": "Outport", "params": {"port": 9}}]
    m["system"]["lines"].append({"src": "Extra/1", "dst": ["Out9/1"]})
    tm = typed(m)
    prop = F.make_property("P1", "", "sig(Switch/1) == 2", tm)
    kept = ir.lower(tm, prop, True).kept
    assert ("Extra",) not in kept and ("Out9",) not in kept
    assert len(kept) == 11


def test_slice_on_all_outputs_is_identity():
    p = program("s2", expr="sig(Out1/1) >= sig(Out1/1)")
    assert p.block_count == FULL_COUNTS["s2"]


def test_algebraic_loop_is_rejected():
    m = {"name": "loop", "system": {
        "blocks": [{"id": "In1", "type": "Inport", "params": {"port": 1}, "out_type": "double"},
                   {"id": "Add", "type": "Add", "params": {"signs": "++"}},
                   {"id": "O", "type": "Outport", "params": {"port": 1}}],
        "lines": [{"src": "In1/1", "dst": ["Add/1"]}, {"src": "Add/1", "dst": ["Add/2", "O/1"]}]}}
    with pytest.raises(ir.AlgebraicLoopError, match="Add"):
        ir.lower(typed(m), None, False)


def test_single_rate_has_no_synthetic_children():
    assert all(not e.dummy and e.activation is None for e in program("s2").root.walk())


def test_s3_rate_divided_child():
    elems = {e.path: e for e in program("s3").root.walk()}
    wrapper = elems[("$rate10",)]
    assert wrapper.dummy and wrapper.activation.kind == "rate" and wrapper.activation.n == 10
    assert "$rate10/$cnt" in [s.name for s in wrapper.wrapper_states]
    assert elems[("One",)].activation.kind == "enabled"


def _mixed(rate):
    return {"name": "mixed", "system": {
        "blocks": [{"id": "In1", "type": "Inport", "params": {"port": 1}, "out_type": "double"},
                   {"id": "G1", "type": "Gain", "params": {"gain": 2}},
                   {"id": "G2", "type": "Gain", "params": {"gain": 3}, "rate": rate},
                   {"id": "D2", "type": "UnitDelay", "params": {"initial": 0}, "rate": rate},
                   {"id": "Out1", "type": "Outport", "params": {"port": 1}},
                   {"id": "Out2", "type": "Outport", "params": {"port": 2}}],
        "lines": [{"src": "In1/1", "dst": ["G1/1", "G2/1"]}, {"src": "G1/1", "dst": ["Out1/1"]},
                  {"src": "G2/1", "dst": ["D2/1"]}, {"src": "D2/1", "dst": ["Out2/1"]}]}}


def test_flat_mixed_rates_split_into_dummy_child():
    root = ir.lower(typed(_mixed(2)), None, False).root
    (child,) = root.children
    assert child.dummy and child.activation.n == 2
    assert [b.path[-1] for b in child.blocks if not b.path[-1].startswith("$")] == ["G2", "D2"]
    assert [b.path[-1] for b in root.blocks if b.child is None] == ["In1", "G1", "Out1", "Out2"]


def test_non_integer_rate_is_rejected():
    with pytest.raises(ModelError):
        ir.lower(typed(_mixed(1.5)), None, False)


def test_chain_runs_owner_to_root():
    p = program("e4_300", "P1")
    assert [e.name for e in p.chain()] == ["C1/C2/C3/C4", "C1/C2/C3", "C1/C2", "C1", ""]
