"""IEEE-754 binary floating point held as raw bit patterns.

Values are decoded to exact rationals, combined exactly, and rounded back
once, so every operation is correctly rounded for half, single and double
alike.  This mirrors the SMT-LIB FloatingPoint theory, which is what the
exact encoding is checked against.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction

RNE, RNA, RTP, RTN, RTZ = "RNE", "RNA", "RTP", "RTN", "RTZ"


@dataclass(frozen=True)
class Format:
    name: str
    eb: int
    sb: int  # significand bits, hidden bit included

    @property
    def width(self) -> int:
        return self.eb + self.sb

    @property
    def bias(self) -> int:
        return (1 << (self.eb - 1)) - 1

    @property
    def emax(self) -> int:
        return self.bias

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def max_finite(self) -> Fraction:
        return Fraction((1 << self.sb) - 1) * Fraction(2) ** (self.emax - self.sb + 1)

    @property
    def smt_sort(self) -> str:
        return {"half": "Float16", "single": "Float32", "double": "Float64"}[self.name]


FORMATS = {
    "half": Format("half", 5, 11),
    "single": Format("single", 8, 24),
    "double": Format("double", 11, 53),
}


def fmt_of(precision: str | Format) -> Format:
    if isinstance(precision, Format):
        return precision
    try:
        return FORMATS[precision]
    except KeyError:
        raise ValueError(f"unknown float precision {precision!r}") from None


@dataclass(frozen=True)
class FloatBits:
    """A float of the given precision, stored as its raw bit pattern."""

    precision: str
    bits: int

    def __post_init__(self):
        f = fmt_of(self.precision)
        if not 0 <= self.bits < (1 << f.width):
            raise ValueError(f"bit pattern {self.bits:#x} does not fit {self.precision}")

    @property
    def fmt(self) -> Format:
        return FORMATS[self.precision]

    @property
    def sign(self) -> int:
        return self.bits >> (self.fmt.width - 1)

    @property
    def exponent_field(self) -> int:
        f = self.fmt
        return (self.bits >> (f.sb - 1)) & ((1 << f.eb) - 1)

    @property
    def significand_field(self) -> int:
        return self.bits & ((1 << (self.fmt.sb - 1)) - 1)

    @property
    def is_nan(self) -> bool:
        return self.exponent_field == (1 << self.fmt.eb) - 1 and self.significand_field != 0

    @property
    def is_inf(self) -> bool:
        return self.exponent_field == (1 << self.fmt.eb) - 1 and self.significand_field == 0

    @property
    def is_zero(self) -> bool:
        return self.exponent_field == 0 and self.significand_field == 0

    @property
    def is_finite(self) -> bool:
        return self.exponent_field != (1 << self.fmt.eb) - 1

    def to_fraction(self) -> Fraction:
        """Exact value; raises for NaN and infinities."""
        if not self.is_finite:
            raise ValueError(f"{self} has no rational value")
        f = self.fmt
        e, m = self.exponent_field, self.significand_field
        if e == 0:
            v = Fraction(m) * Fraction(2) ** (f.emin - f.sb + 1)
        else:
            v = Fraction(m | (1 << (f.sb - 1))) * Fraction(2) ** (e - f.bias - f.sb + 1)
        return -v if self.sign else v

    def __float__(self) -> float:
        if self.is_nan:
            return math.nan
        if self.is_inf:
            return -math.inf if self.sign else math.inf
        if self.precision == "double":
            return struct.unpack("<d", struct.pack("<Q", self.bits))[0]
        return float(self.to_fraction()) if not self.is_zero else (-0.0 if self.sign else 0.0)

    def __repr__(self) -> str:
        return f"FloatBits({self.precision}, {float(self)!r})"

    @classmethod
    def from_float(cls, x: float, precision: str = "double") -> "FloatBits":
        bits = struct.unpack("<Q", struct.pack("<d", x))[0]
        d = cls("double", bits)
        return d if precision == "double" else convert(d, precision)

    @classmethod
    def from_fraction(cls, x, precision: str = "double", rm: str = RNE) -> "FloatBits":
        return round_fraction(Fraction(x), precision, rm)


def nan(precision: str) -> FloatBits:
    f = fmt_of(precision)
    return FloatBits(f.name, (((1 << f.eb) - 1) << (f.sb - 1)) | (1 << (f.sb - 2)))


def inf(precision: str, negative: bool = False) -> FloatBits:
    f = fmt_of(precision)
    return FloatBits(f.name, (int(negative) << (f.width - 1)) | (((1 << f.eb) - 1) << (f.sb - 1)))


def zero(precision: str, negative: bool = False) -> FloatBits:
    f = fmt_of(precision)
    return FloatBits(f.name, int(negative) << (f.width - 1))


def _round_int(m: Fraction, rm: str, negative: bool) -> int:
    """Round a non-negative magnitude to an integer under ``rm``."""
    fl = m.numerator // m.denominator
    rest = m - fl
    if rest == 0:
        return fl
    if rm == RTZ:
        return fl
    if rm == RTP:
        return fl if negative else fl + 1
    if rm == RTN:
        return fl + 1 if negative else fl
    half = Fraction(1, 2)
    if rest > half:
        return fl + 1
    if rest < half:
        return fl
    if rm == RNA:
        return fl + 1
    return fl if fl % 2 == 0 else fl + 1


def round_fraction(x: Fraction, precision: str, rm: str = RNE, zero_negative: bool = False) -> FloatBits:
    """Round an exact rational into the format."""
    f = fmt_of(precision)
    if x == 0:
        return zero(f.name, zero_negative)
    negative = x < 0
    a = -x if negative else x
    e = a.numerator.bit_length() - a.denominator.bit_length()
    if Fraction(2) ** e > a:
        e -= 1
    e = max(e, f.emin)
    quantum = Fraction(2) ** (e - f.sb + 1)
    m = _round_int(a / quantum, rm, negative)
    if m == 1 << f.sb:
        m >>= 1
        e += 1
    if e > f.emax:
        to_inf = rm in (RNE, RNA) or (rm == RTP and not negative) or (rm == RTN and negative)
        if to_inf:
            return inf(f.name, negative)
        return FloatBits(f.name, (int(negative) << (f.width - 1)) | _max_finite_bits(f))
    if m == 0:
        return zero(f.name, negative)
    if m < 1 << (f.sb - 1):
        bexp = 0
        frac = m
    else:
        bexp = e + f.bias
        frac = m - (1 << (f.sb - 1))
    return FloatBits(f.name, (int(negative) << (f.width - 1)) | (bexp << (f.sb - 1)) | frac)


def _max_finite_bits(f: Format) -> int:
    return (((1 << f.eb) - 2) << (f.sb - 1)) | ((1 << (f.sb - 1)) - 1)


def _exact_zero(precision: str, rm: str) -> FloatBits:
    return zero(precision, rm == RTN)


def _same(a: FloatBits, b: FloatBits) -> str:
    if a.precision != b.precision:
        raise ValueError(f"precision mismatch: {a.precision} vs {b.precision}")
    return a.precision


def neg(a: FloatBits) -> FloatBits:
    return FloatBits(a.precision, a.bits ^ (1 << (a.fmt.width - 1)))


def fabs(a: FloatBits) -> FloatBits:
    return FloatBits(a.precision, a.bits & ~(1 << (a.fmt.width - 1)))


def add(a: FloatBits, b: FloatBits, rm: str = RNE) -> FloatBits:
    p = _same(a, b)
    if a.is_nan or b.is_nan:
        return nan(p)
    if a.is_inf or b.is_inf:
        if a.is_inf and b.is_inf and a.sign != b.sign:
            return nan(p)
        return a if a.is_inf else b
    s = a.to_fraction() + b.to_fraction()
    if s == 0:
        if a.is_zero and b.is_zero and a.sign == b.sign:
            return a
        return _exact_zero(p, rm)
    return round_fraction(s, p, rm)


def sub(a: FloatBits, b: FloatBits, rm: str = RNE) -> FloatBits:
    if b.is_nan:
        return nan(b.precision)
    return add(a, neg(b), rm)


def mul(a: FloatBits, b: FloatBits, rm: str = RNE) -> FloatBits:
    p = _same(a, b)
    if a.is_nan or b.is_nan:
        return nan(p)
    sign = a.sign ^ b.sign
    if a.is_inf or b.is_inf:
        if a.is_zero or b.is_zero:
            return nan(p)
        return inf(p, bool(sign))
    return round_fraction(a.to_fraction() * b.to_fraction(), p, rm, zero_negative=bool(sign))


def div(a: FloatBits, b: FloatBits, rm: str = RNE) -> FloatBits:
    p = _same(a, b)
    if a.is_nan or b.is_nan:
        return nan(p)
    sign = bool(a.sign ^ b.sign)
    if a.is_inf:
        return nan(p) if b.is_inf else inf(p, sign)
    if b.is_inf:
        return zero(p, sign)
    if b.is_zero:
        return nan(p) if a.is_zero else inf(p, sign)
    return round_fraction(a.to_fraction() / b.to_fraction(), p, rm, zero_negative=sign)


def lt(a: FloatBits, b: FloatBits) -> bool:
    return _cmp(a, b) == -1


def le(a: FloatBits, b: FloatBits) -> bool:
    return _cmp(a, b) in (-1, 0)


def eq(a: FloatBits, b: FloatBits) -> bool:
    return _cmp(a, b) == 0


def _key(a: FloatBits):
    if a.is_inf:
        return (-1 if a.sign else 1, 0)
    return (0, a.to_fraction())


def _cmp(a: FloatBits, b: FloatBits):
    """-1/0/1, or None when unordered (NaN)."""
    _same(a, b)
    if a.is_nan or b.is_nan:
        return None
    ka, kb = _key(a), _key(b)
    return (ka > kb) - (ka < kb)


def round_to_integral(a: FloatBits, rm: str) -> FloatBits:
    if not a.is_finite or a.is_zero:
        return a
    v = a.to_fraction()
    negative = v < 0
    r = _round_int(abs(v), rm, negative)
    if r == 0:
        return zero(a.precision, negative)
    return round_fraction(Fraction(-r if negative else r), a.precision, RNE)


def convert(a: FloatBits, precision: str, rm: str = RNE) -> FloatBits:
    if a.precision == precision:
        return a
    if a.is_nan:
        return nan(precision)
    if a.is_inf:
        return inf(precision, bool(a.sign))
    if a.is_zero:
        return zero(precision, bool(a.sign))
    return round_fraction(a.to_fraction(), precision, rm)


def from_int(n: int, precision: str, rm: str = RNE) -> FloatBits:
    return round_fraction(Fraction(n), precision, rm)


def rational_neighbours(x: Fraction, precision: str) -> tuple[FloatBits, FloatBits]:
    """Largest float <= x and smallest float >= x (infinities at the ends)."""
    return round_fraction(x, precision, RTN), round_fraction(x, precision, RTP)


def compare_rational(a: FloatBits, op: str, r: Fraction) -> bool:
    """Exact mathematical comparison of a float against a rational."""
    if a.is_nan:
        return op == "!="
    if a.is_inf:
        c = -1 if a.sign else 1
    else:
        v = a.to_fraction()
        c = (v > r) - (v < r)
    return _apply_cmp(c, op)


def _apply_cmp(c: int, op: str) -> bool:
    return {
        "<": c < 0,
        "<=": c <= 0,
        ">": c > 0,
        ">=": c >= 0,
        "==": c == 0,
        "!=": c != 0,
    }[op]


def split_fields(a: FloatBits) -> tuple[str, str, str]:
    """Binary strings for sign, exponent and significand fields."""
    f = a.fmt
    return (
        format(a.sign, "b"),
        format(a.exponent_field, f"0{f.eb}b"),
        format(a.significand_field, f"0{f.sb - 1}b"),
    )
