import json
from pathlib import Path

import pytest

from blockcheck import bundled, frontend as F, ir
from blockcheck.solver import SolverMissing, solver_command

GOLDEN = Path(__file__).resolve().parent / "golden"


def typed(obj) -> F.TypedModel:
    """TypedModel from a dict or JSON text; fails the test on error diagnostics."""
    text = obj if isinstance(obj, str) else json.dumps(obj)
    diags: list = []
    tm = F.infer_types(F.load_model(text, diags), diags)
    errors = [d for d in diags if d.severity == "error"]
    assert not errors, errors
    return tm


def program(name: str, pid: str | None = None, slicing: bool = True, expr: str | None = None, scope: str = ""):
    """Lowered program for a bundled model and one of its properties (or an inline one)."""
    tm = bundled.load(name)
    if expr is not None:
        prop = F.make_property(pid or "inline", scope, expr, tm)
    elif pid is not None:
        prop = next(p for p in bundled.properties(name, tm) if p.id == pid)
    else:
        prop = None
    return ir.lower(tm, prop, slicing)


def model_dict(name: str) -> dict:
    return json.loads(bundled.model_path(name).read_text())


def with_threshold(th) -> F.TypedModel:
    """S2 with a different Switch threshold."""
    m = model_dict("s2")
    for b in m["system"]["blocks"]:
        if b["id"] == "Switch":
            b["params"]["threshold"] = th
    return typed(m)


def _have_solver() -> bool:
    try:
        solver_command()
    except SolverMissing:
        return False
    return True


HAVE_SOLVER = _have_solver()
needs_solver = pytest.mark.skipif(not HAVE_SOLVER, reason="no SMT solver available")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
