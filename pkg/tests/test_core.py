from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from blockcheck.core import (CastError, DataType, ModelError, dtype_flatten, value_cast, wrap_int)
from blockcheck.floats import FloatBits

INT_TYPES = [DataType(f"{s}int{n}") for s in ("", "u") for n in (8, 16, 32, 64)]
ROUNDINGS = ["floor", "nearest", "zero", "ceil"]


def d(x: float) -> FloatBits:
    return FloatBits.from_float(x)


def test_cast_300_to_uint8_wraps():
    assert value_cast(d(300.0), DataType("uint8"), "floor", False) == 44


@pytest.mark.parametrize("rounding", ROUNDINGS)
def test_cast_exact_one(rounding):
    assert value_cast(d(1.0), DataType("uint8"), rounding, False) == 1
    assert value_cast(d(1.0), DataType("uint8"), rounding, True) == 1


def test_cast_negative_saturating_floor():
    assert value_cast(d(-3.7), DataType("int8"), "floor", True) == -4


def test_cast_rounding_modes():
    t = DataType("int16")
    x = d(-2.5)
    assert [value_cast(x, t, r) for r in ROUNDINGS] == [-3, -2, -2, -2]
    x = d(3.5)
    assert [value_cast(x, t, r) for r in ROUNDINGS] == [3, 4, 3, 4]


def test_cast_errors():
    with pytest.raises(CastError):
        value_cast(FloatBits("double", 0x7FF8000000000000), DataType("int32"))
    with pytest.raises(CastError):
        value_cast((1, 2), DataType("int32"))
    with pytest.raises(CastError):
        value_cast(1, DataType("int32", (2,)))


def test_cast_to_float_rounds_to_nearest_even():
    v = value_cast(Fraction(1, 10), DataType("double"))
    assert float(v) == 0.1
    # 2^24 + 1 is a tie in single precision and goes to the even neighbour
    assert value_cast(2 ** 24 + 1, DataType("single")).to_fraction() == 2 ** 24


def test_flatten_scalar_and_vector():
    assert dtype_flatten(DataType("double"), {}) == [("", DataType("double"))]
    assert dtype_flatten(DataType("uint8", (3,)), {}) == [(f"_{i}", DataType("uint8")) for i in (1, 2, 3)]


def test_flatten_bus_matches_accessor_names():
    table = {"BO": [("e1", DataType("int32")), ("e2", DataType("double", (2, 2)))]}
    names = [p for p, _ in dtype_flatten(DataType("bus:BO"), table)]
    assert names == ["e1", "e2_1_1", "e2_1_2", "e2_2_1", "e2_2_2"]


def test_flatten_nested_bus_and_unknown():
    table = {"In": [("a", DataType("boolean"))], "Out": [("x", DataType("bus:In")), ("y", DataType("single"))]}
    assert [p for p, _ in dtype_flatten(DataType("bus:Out"), table)] == ["x_a", "y"]
    with pytest.raises(ModelError):
        dtype_flatten(DataType("bus:Nope"), table)


def test_type_strings():
    assert DataType.parse("double x 2 x 2") == DataType("double", (2, 2))
    assert str(DataType("uint8", (3,))) == "uint8 x 3"
    with pytest.raises(ValueError):
        DataType.parse("float7")


@settings(max_examples=2000, deadline=None)
@given(st.fractions(min_value=-(2 ** 70), max_value=2 ** 70), st.sampled_from(INT_TYPES), st.sampled_from(ROUNDINGS))
def test_cast_saturate_in_range_and_wrap_is_modular(x, t, rounding):
    lo, hi = t.int_range
    sat = value_cast(x, t, rounding, True)
    assert lo <= sat <= hi
    wrapped = value_cast(x, t, rounding, False)
    ideal = value_cast(x, DataType("integer"), rounding)
    assert lo <= wrapped <= hi
    assert (wrapped - ideal) % (1 << t.bits) == 0
    if lo <= ideal <= hi:
        assert sat == wrapped == ideal


@settings(max_examples=500, deadline=None)
@given(st.integers(min_value=-2047, max_value=2047), st.integers(min_value=0, max_value=12),
       st.sampled_from(["half", "single", "double"]))
def test_cast_identity_on_representable(n, shift, prec):
    # 11 significant bits and a small binary exponent fit every precision
    x = Fraction(n, 2 ** shift)
    v = value_cast(x, DataType(prec))
    assert v.to_fraction() == x
    assert value_cast(v, DataType(prec)) == v


@given(st.integers(min_value=-(2 ** 80), max_value=2 ** 80), st.sampled_from(INT_TYPES))
def test_wrap_int_oracle(n, t):
    m = n % (1 << t.bits)
    if t.signed and m >= 1 << (t.bits - 1):
        m -= 1 << t.bits
    assert wrap_int(n, t) == m
