"""Domain types shared by every stage: data types, values, models, traces.

Values use native Python types where they are exact already:

* ``bool`` for booleans,
* ``int`` for machine integers (range is a property of the DataType),
* ``Fraction`` for mathematical reals (ideal arithmetic),
* :class:`~blockcheck.floats.FloatBits` for machine floats,
* ``tuple`` (row-major) for vectors and matrices,
* ``dict`` from flattened member path to scalar for buses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

from . import floats
from .floats import FloatBits

INT_WIDTHS = (8, 16, 32, 64)
FLOAT_NAMES = ("half", "single", "double")
ROUNDINGS = ("floor", "nearest", "zero", "ceil")


class ModelError(Exception):
    """Raised for structurally or semantically invalid models."""


class CastError(ArithmeticError):
    """Raised when a value cannot be converted (e.g. NaN to an integer)."""


@dataclass(frozen=True)
class DataType:
    """Element base type plus optional dimensions.

    ``base`` is one of ``boolean``, ``uintN``/``intN``, ``half``/``single``/
    ``double``, ``bus:Name``, or the internal mathematical kinds ``real``
    and ``integer`` used only for property arithmetic.
    """

    base: str
    dims: tuple[int, ...] = ()

    def __post_init__(self):
        if self.base not in _SCALAR_BASES and not self.base.startswith("bus:"):
            raise ValueError(f"unknown base type {self.base!r}")
        if any(d < 1 for d in self.dims) or len(self.dims) > 2:
            raise ValueError(f"bad dimensions {self.dims}")
        if self.dims and self.base.startswith("bus:"):
            raise ValueError("arrays of buses are not supported")

    @classmethod
    def parse(cls, text: str) -> "DataType":
        parts = [p.strip() for p in text.split("x")] if not text.startswith("bus:") else [text]
        base = parts[0]
        try:
            dims = tuple(int(p) for p in parts[1:])
        except ValueError:
            raise ValueError(f"bad type string {text!r}") from None
        return cls(base, dims)

    def __str__(self) -> str:
        return " x ".join([self.base, *map(str, self.dims)])

    @property
    def scalar(self) -> "DataType":
        return DataType(self.base) if self.dims else self

    @property
    def is_scalar(self) -> bool:
        return not self.dims and not self.is_bus

    @property
    def is_bus(self) -> bool:
        return self.base.startswith("bus:")

    @property
    def bus_name(self) -> str:
        return self.base[4:]

    @property
    def is_bool(self) -> bool:
        return self.base == "boolean"

    @property
    def is_float(self) -> bool:
        return self.base in FLOAT_NAMES

    @property
    def is_int(self) -> bool:
        return self.base[:3] == "int" and self.base != "integer" or self.base[:4] == "uint"

    @property
    def is_math(self) -> bool:
        return self.base in ("real", "integer")

    @property
    def is_numeric(self) -> bool:
        return self.is_float or self.is_int or self.is_math

    @property
    def signed(self) -> bool:
        return self.base.startswith("int")

    @property
    def bits(self) -> int:
        if self.is_int:
            return int(self.base.lstrip("uint"))
        if self.is_float:
            return floats.FORMATS[self.base].width
        raise ValueError(f"{self} has no bit width")

    @property
    def int_range(self) -> tuple[int, int]:
        n = self.bits
        if self.signed:
            return -(1 << (n - 1)), (1 << (n - 1)) - 1
        return 0, (1 << n) - 1

    @property
    def size(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    def with_dims(self, dims: tuple[int, ...]) -> "DataType":
        return DataType(self.base, tuple(dims))


_SCALAR_BASES = {"boolean", "half", "single", "double", "real", "integer"} | {
    f"{p}int{n}" for p in ("", "u") for n in INT_WIDTHS
}

BOOLEAN = DataType("boolean")
DOUBLE = DataType("double")
REAL = DataType("real")
INTEGER = DataType("integer")


def element_suffixes(dims: tuple[int, ...]) -> list[str]:
    """Row-major, 1-based element suffixes: ``_1``.. for vectors, ``_r_c`` for matrices."""
    if not dims:
        return [""]
    if len(dims) == 1:
        return [f"_{i}" for i in range(1, dims[0] + 1)]
    return [f"_{r}_{c}" for r in range(1, dims[0] + 1) for c in range(1, dims[1] + 1)]


def dtype_flatten(t: DataType, bus_table: Mapping[str, list[tuple[str, DataType]]]) -> list[tuple[str, DataType]]:
    """Ordered scalar leaves of ``t`` as (element path, scalar type)."""
    if t.is_bus:
        if t.bus_name not in bus_table:
            raise ModelError(f"unresolved bus type {t.bus_name!r}")
        out = []
        for member, mt in bus_table[t.bus_name]:
            sep = "_" if mt.is_bus else ""
            out.extend((f"{member}{sep}{path}", st) for path, st in dtype_flatten(mt, bus_table))
        return out
    return [(sfx, t.scalar) for sfx in element_suffixes(t.dims)]


# ---------------------------------------------------------------------------
# scalar value helpers


def zero_value(t: DataType, mode: str = "machine"):
    t = t.scalar
    if t.is_bool:
        return False
    if t.is_float:
        return floats.zero(t.base) if mode == "machine" else Fraction(0)
    if t.is_int or t.base == "integer":
        return 0
    return Fraction(0)


def to_rational(v) -> Fraction:
    """Exact rational of a scalar value (bool as 0/1)."""
    if isinstance(v, bool):
        return Fraction(int(v))
    if isinstance(v, FloatBits):
        return v.to_fraction()
    return Fraction(v)


def parse_number(x) -> Fraction | int | bool:
    """Numbers from the JSON dialect: ints, Fractions or numeric strings."""
    if isinstance(x, bool):
        return x
    if isinstance(x, (int, Fraction)):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    if isinstance(x, str):
        return Fraction(x)
    raise ValueError(f"not a number: {x!r}")


def _round(x: Fraction, rounding: str) -> int:
    fl = x.numerator // x.denominator
    if x == fl:
        return fl
    if rounding == "floor":
        return fl
    if rounding == "ceil":
        return fl + 1
    if rounding == "zero":
        return fl if x > 0 else fl + 1
    if rounding == "nearest":
        rest = x - fl
        if rest != Fraction(1, 2):
            return fl if rest < Fraction(1, 2) else fl + 1
        return fl if fl % 2 == 0 else fl + 1
    raise ValueError(f"unknown rounding {rounding!r}")


def wrap_int(n: int, t: DataType) -> int:
    bits = t.bits
    n &= (1 << bits) - 1
    if t.signed and n >= 1 << (bits - 1):
        n -= 1 << bits
    return n


def clamp_int(n: int, t: DataType) -> int:
    lo, hi = t.int_range
    return min(max(n, lo), hi)


def value_cast(v, target: DataType, rounding: str = "floor", saturate: bool = False, mode: str = "machine"):
    """Convert a scalar value to ``target``.

    Machine mode follows IEEE-754 (round to nearest even) for float targets
    and rounds-then-wraps (or clamps) for integer targets.  Ideal mode keeps
    reals exact and only rounds toward integers.
    """
    if isinstance(v, (tuple, list, dict)):
        raise CastError("value_cast expects a scalar value")
    if not target.is_scalar:
        raise CastError(f"cannot cast to non-scalar type {target}")
    if target.is_bool:
        if isinstance(v, FloatBits):
            return v.is_nan or not v.is_zero
        return to_rational(v) != 0
    if isinstance(v, bool):
        v = int(v)
    if target.is_float or target.base == "real":
        if mode == "ideal" or target.base == "real":
            if isinstance(v, FloatBits):
                if not v.is_finite:
                    raise CastError(f"non-finite value {v} in ideal arithmetic")
                return v.to_fraction()
            return Fraction(v)
        if isinstance(v, FloatBits):
            return floats.convert(v, target.base)
        return floats.round_fraction(Fraction(v), target.base)
    # integer targets
    if isinstance(v, FloatBits):
        if v.is_nan:
            raise CastError("NaN cannot be converted to an integer")
        if v.is_inf:
            if not saturate or mode == "ideal":
                raise CastError("infinity cannot be converted to an integer")
            lo, hi = target.int_range
            return lo if v.sign else hi
        v = v.to_fraction()
    n = _round(Fraction(v), rounding)
    if mode == "ideal" or target.base == "integer":
        return n
    return clamp_int(n, target) if saturate else wrap_int(n, target)


def coerce_literal(x, t: DataType, mode: str = "machine"):
    """A parameter literal as a value of scalar type ``t`` (nearest rounding)."""
    x = parse_number(x) if not isinstance(x, (FloatBits,)) else x
    return value_cast(x, t.scalar, rounding="nearest", saturate=True, mode=mode)


# ---------------------------------------------------------------------------
# model structure


PortRef = tuple[str, Any]  # (block id, 1-based port index or "enable"/"trigger")


@dataclass(frozen=True)
class Line:
    src: PortRef
    dsts: tuple[PortRef, ...]


@dataclass(frozen=True)
class Block:
    id: str
    type: str
    params: dict = field(default_factory=dict, hash=False, compare=True)
    out_type: DataType | None = None
    rate: int | None = None
    system: "Subsystem | None" = None
    stub: bool = False


@dataclass(frozen=True)
class Subsystem:
    blocks: tuple[Block, ...]
    lines: tuple[Line, ...]
    path: tuple[str, ...] = ()

    def block(self, bid: str) -> Block:
        for b in self.blocks:
            if b.id == bid:
                return b
        raise KeyError(bid)

    @property
    def path_str(self) -> str:
        return "/".join(self.path)


@dataclass(frozen=True)
class Model:
    name: str
    sample_time: Fraction
    bus_types: dict = field(default_factory=dict, hash=False)
    system: Subsystem = None

    def subsystem(self, path: tuple[str, ...]) -> Subsystem:
        s = self.system
        for name in path:
            b = s.block(name)
            if b.system is None:
                raise KeyError("/".join(path))
            s = b.system
        return s

    def walk(self):
        """Yield every subsystem, parents before children."""
        stack = [self.system]
        while stack:
            s = stack.pop(0)
            yield s
            stack.extend(b.system for b in s.blocks if b.system is not None)

    @property
    def block_count(self) -> int:
        return sum(len(s.blocks) for s in self.walk())


# ---------------------------------------------------------------------------
# properties and traces


@dataclass(frozen=True)
class Property:
    """An invariant over signals of one subsystem.

    ``expr`` is the parsed predicate tree (see :mod:`blockcheck.frontend`);
    checking looks for a reachable step where it is false.
    """

    id: str
    scope: tuple[str, ...]
    text: str
    expr: Any = None

    @property
    def scope_str(self) -> str:
        return "/".join(self.scope)


@dataclass
class Trace:
    """Signals of one execution path.

    ``states[0]`` is the initial state (step -1) and ``states[j + 1]`` the
    state after step ``j``; ``signals[j]`` holds every named value computed
    at step ``j`` (inputs, outputs, internal signals); ``active[j]`` lists the
    subsystem paths executing at ``j``; ``holds[j]`` is the property value at
    ``j`` (None when its subsystem did not execute or no property is set).
    """

    inputs: list[dict] = field(default_factory=list)
    outputs: list[dict] = field(default_factory=list)
    states: list[dict] = field(default_factory=list)
    signals: list[dict] = field(default_factory=list)
    active: list[set] = field(default_factory=list)
    holds: list = field(default_factory=list)
    violation: int | None = None

    @property
    def length(self) -> int:
        return len(self.inputs)


_NUMERIC_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$|^[+-]?\d+/\d+$")


def looks_numeric(s: str) -> bool:
    return bool(_NUMERIC_RE.match(s.strip()))
