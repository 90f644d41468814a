import math
import struct

import pytest
from hypothesis import assume, given, settings, strategies as st

from blockcheck import floats as fl
from blockcheck.floats import FloatBits

PACK = {"half": "<e", "single": "<f", "double": "<d"}
UINT = {"half": "<H", "single": "<I", "double": "<Q"}
WIDTH = {"half": 16, "single": 32, "double": 64}


def host(x: float, prec: str) -> FloatBits:
    """Round a host double to ``prec`` through struct, which rounds to nearest even."""
    try:
        raw = struct.pack(PACK[prec], x)
    except OverflowError:
        return fl.inf(prec, x < 0)
    return FloatBits(prec, struct.unpack(UINT[prec], raw)[0])


def as_float(a: FloatBits) -> float:
    return float(a)


def patterns(prec):
    return st.integers(min_value=0, max_value=(1 << WIDTH[prec]) - 1).map(lambda b: FloatBits(prec, b))


def same(a: FloatBits, b: FloatBits) -> bool:
    return (a.is_nan and b.is_nan) or a == b


OPS = {"add": lambda x, y: x + y, "sub": lambda x, y: x - y, "mul": lambda x, y: x * y}


@settings(max_examples=600, deadline=None)
@given(st.sampled_from(["half", "single", "double"]), st.data(), st.sampled_from(sorted(OPS)))
def test_arith_matches_host(prec, data, op):
    a = data.draw(patterns(prec))
    b = data.draw(patterns(prec))
    # double rounding through binary64 is innocuous for half and single (53 >= 2p + 2)
    try:
        expect = OPS[op](as_float(a), as_float(b))
    except OverflowError:
        assume(False)
    got = getattr(fl, op)(a, b)
    assert same(got, host(expect, prec)), (a, b, got)


@settings(max_examples=300, deadline=None)
@given(patterns("double"), patterns("double"))
def test_div_matches_host(a, b):
    x, y = as_float(a), as_float(b)
    if y == 0.0:
        if math.isnan(x) or x == 0.0:
            expect = math.nan
        else:
            expect = math.copysign(math.inf, x) * math.copysign(1.0, y)
    else:
        expect = x / y
    assert same(fl.div(a, b), host(expect, "double"))


def test_comparisons_follow_ieee():
    nan = fl.nan("double")
    one = FloatBits.from_float(1.0)
    assert not fl.lt(nan, one) and not fl.le(nan, nan) and not fl.eq(nan, nan)
    assert fl.eq(fl.zero("double"), fl.zero("double", True))
    assert fl.lt(fl.inf("double", True), one)


def test_point_nine_fields():
    s, e, m = fl.split_fields(FloatBits.from_float(0.9))
    assert (s, e) == ("0", "01111111110")
    assert m == "1100110011001100110011001100110011001100110011001101"


@pytest.mark.parametrize("prec", ["half", "single", "double"])
def test_round_fraction_overflow_and_ties(prec):
    f = fl.FORMATS[prec]
    assert fl.round_fraction(f.max_finite * 2, prec).is_inf
    assert fl.round_fraction(f.max_finite, prec).to_fraction() == f.max_finite
    assert fl.round_fraction(-f.max_finite * 2, prec, fl.RTZ).to_fraction() == -f.max_finite


def test_convert_narrows_with_rounding():
    x = FloatBits.from_float(0.1)
    assert float(fl.convert(x, "single")) == struct.unpack("<f", struct.pack("<f", 0.1))[0]
    assert fl.convert(FloatBits.from_float(1e10), "half").is_inf
