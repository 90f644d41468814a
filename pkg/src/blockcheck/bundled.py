"""The example models shipped with the package and their property files."""

from __future__ import annotations

from pathlib import Path

from . import frontend as F

MODELS_DIR = Path(__file__).resolve().parent / "models"

# S1-S4 are the small examples, E1-E5 the evaluation-style models.  E4
# comes in two reset thresholds (200 and 300) that differ only in one constant.
NAMES = ("s1", "s2", "s3", "s4", "e1", "e2", "e3", "e4_200", "e4_300", "e5")


def model_path(name: str) -> Path:
    return MODELS_DIR / f"{name}.json"


def props_path(name: str) -> Path:
    return MODELS_DIR / f"{name}.props.json"


def load(name: str) -> F.TypedModel:
    diags: list = []
    return F.infer_types(F.load_model(model_path(name).read_text()), diags)


def properties(name: str, tm: F.TypedModel | None = None) -> list:
    tm = tm or load(name)
    return F.load_properties(props_path(name).read_text(), tm)
