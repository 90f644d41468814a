import csv
import json
from fractions import Fraction

import pytest

from blockcheck import bundled
from blockcheck.cli import combine_exit_codes, main

from conftest import GOLDEN, needs_solver


def model(name):
    return str(bundled.model_path(name))


def props(name):
    return str(bundled.props_path(name))


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@needs_solver
def test_check_falsified_writes_cex(tmp_path):
    out, cex = tmp_path / "r.json", tmp_path / "cex.csv"
    code = main(["check", "--model", model("s2"), "--prop", props("s2"), "--prop-id", "P1",
                 "--engine", "bmc", "--encoding", "exact", "--out", str(out), "--cex", str(cex)])
    assert code == 1
    rep = json.loads(out.read_text())
    assert rep["verdict"] == "falsified" and rep["violation_step"] == 6 and rep["validated"] is True
    assert rep["artifacts"]["cex_csv"] == str(cex)
    table = rows(cex)
    assert [r["step"] for r in table] == [str(j) for j in range(-1, 7)]


@needs_solver
def test_check_valid(tmp_path):
    out = tmp_path / "r.json"
    code = main(["check", "--model", model("s1"), "--prop", props("s1"), "--prop-id", "Q1",
                 "--engine", "kind", "--encoding", "approx", "-o", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert (rep["verdict"], rep["d"], rep["k"]) == ("valid", 1, 2)


@needs_solver
def test_multiple_properties_combine_exit_codes(tmp_path):
    out = tmp_path / "r.json"
    code = main(["check", "--model", model("s1"), "--prop", props("s1"), "--engine", "auto",
                 "--encoding", "approx", "--out", str(out)])
    assert code == 1
    rep = json.loads(out.read_text())
    assert [r["verdict"] for r in rep["reports"]] == ["falsified", "valid"]


@needs_solver
def test_switch_objective(tmp_path):
    out = tmp_path / "r.json"
    code = main(["check", "--model", model("s2"), "--objective", "switch:Switch", "--engine", "bmc",
                 "--encoding", "approx", "--max-k", "10", "--out", str(out)])
    rep = json.loads(out.read_text())
    ids = {r["property"]: r["violation_step"] for r in rep["reports"]}
    assert ids == {"Switch.true": 6, "Switch.false": 0}
    assert code == 1


def test_missing_solver_is_reported(monkeypatch, capsys):
    monkeypatch.setenv("BLOCKCHECK_SOLVER", "no-such-solver-binary")
    code = main(["check", "--model", model("s1"), "--prop", props("s1"), "--prop-id", "Q1", "--engine", "bmc"])
    assert code == 3
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["check", "--bogus"], ["frobnicate"], [],
                                  ["check", "--model", "/nonexistent.json", "--expr", "true"],
                                  ["check", "--model", "MODEL", "--prop-id", "nope", "--prop", "PROPS"],
                                  ["check", "--model", "MODEL", "--expr", "true", "--max-k", "0"]])
def test_usage_errors_exit_3(argv, capsys):
    argv = [model("s1") if a == "MODEL" else props("s1") if a == "PROPS" else a for a in argv]
    assert main(argv) == 3


def test_encode_matches_golden(tmp_path):
    out = tmp_path / "s2.smt2"
    assert main(["encode", "--model", model("s2"), "--prop", props("s2"), "--prop-id", "P1",
                 "--encoding", "approx", "-k", "2", "--out", str(out)]) == 0
    assert out.read_bytes() == (GOLDEN / "s2.P1.approx.k2.smt2").read_bytes()


def test_encode_exact_has_fp_prologue(capsys):
    assert main(["encode", "--model", model("s1"), "--prop", props("s1"), "--prop-id", "Q1",
                 "--encoding", "exact", "-k", "1"]) == 0
    text = capsys.readouterr().out
    assert "(define-fun double.saturate ((hi Float64) (lo Float64) (x Float64)) Float64" in text


def _decls(text):
    return {line.split()[1] for line in text.splitlines() if line.startswith(("(define-fun", "(declare-const"))}


def test_encode_slice_off_is_superset(capsys):
    base = ["encode", "--model", model("e5"), "--prop", props("e5"), "--prop-id", "P1", "-k", "2"]
    main(base + ["--slice", "on"])
    on = _decls(capsys.readouterr().out)
    main(base + ["--slice", "off"])
    off = _decls(capsys.readouterr().out)
    assert on < off


def test_encode_emits_ir(tmp_path, capsys):
    target = tmp_path / "ir.json"
    main(["encode", "--model", model("s2"), "--expr", "true", "--emit-ir", str(target)])
    assert json.loads(target.read_text())


def test_simulate_approaches_ten(tmp_path):
    inputs = tmp_path / "in.csv"
    inputs.write_text("step,In1\n" + "".join(f"{j},1\n" for j in range(20)))
    out = tmp_path / "tr.csv"
    assert main(["simulate", "--model", model("s1"), "--inputs", str(inputs), "--mode", "ideal",
                 "--out", str(out)]) == 0
    values = [Fraction(r["Out1"]) for r in rows(out) if r["step"] != "-1"]
    assert len(values) == 20
    assert all(a < b < 10 for a, b in zip(values, values[1:]))
    assert values[-1] == 10 - 10 * Fraction(9, 10) ** 20


def test_simulate_reports_no_violation(tmp_path, capsys):
    assert main(["simulate", "--model", model("s2"), "--expr", "true", "--steps", "5",
                 "--out", str(tmp_path / "t.csv")]) == 0
    assert "inline: no violation" in capsys.readouterr().out


def test_simulate_reports_violation(tmp_path, capsys):
    inputs = tmp_path / "in.csv"
    inputs.write_text("In1\n" + "1\n" * 8)
    code = main(["simulate", "--model", model("s2"), "--prop", props("s2"), "--prop-id", "P1",
                 "--inputs", str(inputs), "--out", str(tmp_path / "t.csv")])
    assert code == 1
    assert "P1: violation at step 6" in capsys.readouterr().out


def test_simulate_input_arity_mismatch(tmp_path):
    inputs = tmp_path / "in.csv"
    inputs.write_text("In1\n1\n")
    assert main(["simulate", "--model", model("s1"), "--inputs", str(inputs), "--steps", "4"]) == 3


def test_machine_and_ideal_csvs_agree_on_representable_model(tmp_path):
    inputs = tmp_path / "in.csv"
    inputs.write_text("In1\n" + "".join(f"{x / 4}\n" for x in (-8, 3, 5, 0, 7, -2, 1, 4)))
    for mode in ("machine", "ideal"):
        assert main(["simulate", "--model", model("e2"), "--inputs", str(inputs), "--mode", mode,
                     "--out", str(tmp_path / f"{mode}.csv")]) == 0
    m, i = rows(tmp_path / "machine.csv"), rows(tmp_path / "ideal.csv")
    for a, b in zip(m, i):
        for col, v in b.items():
            if v and col != "step" and v not in ("true", "false"):
                assert Fraction(a[col]) == Fraction(v), col


def test_combine_exit_codes():
    assert combine_exit_codes([0, 0]) == 0
    assert combine_exit_codes([0, 1]) == 1
    assert combine_exit_codes([1, 2, 0]) == 2
