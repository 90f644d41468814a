import json

import pytest
from hypothesis import given, settings, strategies as st

from blockcheck import bundled, frontend as F
from blockcheck.core import DataType

from conftest import model_dict, typed

DOUBLE = DataType("double")


def minimal(extra_blocks=(), extra_lines=()):
    return {
        "name": "m",
        "system": {
            "blocks": [{"id": "C", "type": "Constant", "params": {"value": 2}},
                       {"id": "O", "type": "Outport", "params": {"port": 1}}, *extra_blocks],
            "lines": [{"src": "C/1", "dst": ["O/1"]}, *extra_lines],
        },
    }


def errors_of(obj):
    with pytest.raises(F.FrontendError) as info:
        F.infer_types(F.load_model(json.dumps(obj)))
    return info.value.diagnostics


def test_minimal_model():
    m = F.load_model(json.dumps(minimal()))
    assert len(m.system.blocks) == 2
    assert len(m.system.lines) == 1
    assert F.infer_types(m).out_type((), "C") == DOUBLE


def test_unknown_block_is_stubbed_with_warning():
    obj = minimal([{"id": "L", "type": "Lookup2D", "params": {"inputs": 2}, "out_type": "double"},
                   {"id": "T", "type": "Terminator"}],
                  [{"src": "C/1", "dst": ["L/1", "L/2"]}, {"src": "L/1", "dst": ["T/1"]}])
    diags = []
    m = F.load_model(json.dumps(obj), diags)
    assert m.system.block("L").stub
    assert [d.code for d in diags] == ["stubbed"]
    assert diags[0].severity == "warning" and diags[0].location == "L"


@pytest.mark.parametrize("text", ["{", "[]", '{"name": "x"}'])
def test_malformed_input(text):
    with pytest.raises(F.FrontendError):
        F.load_model(text)


def test_dangling_line_is_an_error():
    diags = errors_of(minimal(extra_lines=[{"src": "C/1", "dst": ["Nope/1"]}]))
    assert any("Nope" in d.message for d in diags)
    assert all(d.severity == "error" for d in diags)


def test_duplicate_block_id():
    obj = minimal([{"id": "C", "type": "Constant", "params": {"value": 1}}])
    assert any("duplicate" in d.message for d in errors_of(obj))


def test_s1_signals_are_double():
    tm = bundled.load("s1")
    for bid in ("In1", "Saturation", "Gain", "Add", "Delay"):
        assert tm.out_type((), bid) == DOUBLE


def test_gain_on_vector_is_elementwise():
    obj = {"name": "v", "system": {
        "blocks": [{"id": "In1", "type": "Inport", "params": {"port": 1}, "out_type": "double x 3"},
                   {"id": "G", "type": "Gain", "params": {"gain": 2}},
                   {"id": "O", "type": "Outport", "params": {"port": 1}}],
        "lines": [{"src": "In1/1", "dst": ["G/1"]}, {"src": "G/1", "dst": ["O/1"]}]}}
    assert typed(obj).out_type((), "G") == DataType("double", (3,))


def test_switch_branch_conflict():
    obj = {"name": "sw", "system": {
        "blocks": [{"id": "A", "type": "Inport", "params": {"port": 1}, "out_type": "int32"},
                   {"id": "B", "type": "Inport", "params": {"port": 2}, "out_type": "double"},
                   {"id": "Sw", "type": "Switch", "params": {"criteria": "u2 > 0"}},
                   {"id": "O", "type": "Outport", "params": {"port": 1}}],
        "lines": [{"src": "A/1", "dst": ["Sw/1"]}, {"src": "B/1", "dst": ["Sw/2", "Sw/3"]},
                  {"src": "Sw/1", "dst": ["O/1"]}]}}
    diags = errors_of(obj)
    assert diags[0].code == "type" and diags[0].location == "Sw"


def test_unannotated_loop_defaults_to_double():
    obj = {"name": "d", "system": {
        "blocks": [{"id": "D", "type": "UnitDelay", "params": {"initial": 0}},
                   {"id": "O", "type": "Outport", "params": {"port": 1}}],
        "lines": [{"src": "D/1", "dst": ["O/1", "D/1"]}]}}
    diags = []
    tm = F.infer_types(F.load_model(json.dumps(obj)), diags)
    assert tm.out_type((), "D") == DOUBLE
    assert [d.code for d in diags] == ["default-double"]


def test_property_scoped_to_child():
    tm = bundled.load("s2")
    p = F.make_property("P", "S1", "sig(Add/1) <= 5", tm)
    (ref,) = F.refs_of(p.expr)
    assert (ref.path, ref.block, ref.port) == (("S1",), "Add", 1)


def test_property_true_is_constant():
    p = F.make_property("T", "", "true", bundled.load("s1"))
    assert F.refs_of(p.expr) == []


@pytest.mark.parametrize("expr", ["sig(NoSuchBlock/1) > 0", "sig(Add/1) + 1", "sig(Add/1) <=", "sig(S1/Add/1) > 0"])
def test_property_errors(expr):
    with pytest.raises(F.PropertyError):
        F.make_property("E", "", expr, bundled.load("s2"))


def test_property_file_loads_list():
    tm = bundled.load("s4")
    props = F.load_properties(bundled.props_path("s4").read_text(), tm)
    assert [p.id for p in props] == ["P1", "Q1", "Q2"]
    refs = F.refs_of(props[1].expr)
    assert refs[0].element == ".e2_2_2"


@pytest.mark.parametrize("name", bundled.NAMES)
def test_round_trip_and_idempotent_typing(name):
    m = F.load_model(json.dumps(model_dict(name)))
    again = F.load_model(json.dumps(F.dump_model(m)))
    assert again == m
    tm = F.infer_types(m)
    assert F.infer_types(tm).out_types == tm.out_types


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([0.9, -1, 3, 0.1, 2.5, 1e-3]), min_size=1, max_size=4),
       st.sampled_from(["double", "single", "int16", "uint8 x 2"]))
def test_generated_chain_round_trips(gains, ty):
    blocks = [{"id": "In1", "type": "Inport", "params": {"port": 1}, "out_type": ty}]
    lines = []
    prev = "In1"
    for n, g in enumerate(gains):
        blocks.append({"id": f"G{n}", "type": "Gain", "params": {"gain": g}})
        lines.append({"src": f"{prev}/1", "dst": [f"G{n}/1"]})
        prev = f"G{n}"
    blocks.append({"id": "O", "type": "Outport", "params": {"port": 1}})
    lines.append({"src": f"{prev}/1", "dst": ["O/1"]})
    m = F.load_model(json.dumps({"name": "g", "sample_time": 0.5, "system": {"blocks": blocks, "lines": lines}}))
    assert F.load_model(json.dumps(F.dump_model(m))) == m


def test_diagnostic_locations_resolve():
    obj = minimal([{"id": "X", "type": "Mystery", "params": {"inputs": 1}, "out_type": "double"},
                   {"id": "T", "type": "Terminator"}],
                  [{"src": "C/1", "dst": ["X/1"]}, {"src": "X/1", "dst": ["T/1"]}])
    diags = []
    m = F.load_model(json.dumps(obj), diags)
    for d in diags:
        assert m.system.block(d.location) is not None
