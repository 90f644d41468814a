from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from blockcheck import smtlib as S
from blockcheck.floats import FloatBits

POINT_NINE = "(fp #b0 #b01111111110 #b1100110011001100110011001100110011001100110011001101)"


def test_print_fp_literal_point_nine():
    assert S.print_fp_literal(FloatBits.from_float(0.9).bits, "double") == POINT_NINE


def test_print_fp_literal_one_and_half():
    assert S.print_fp_literal(FloatBits.from_float(1.0).bits, "double") == "(fp #b0 #b01111111111 #b" + "0" * 52 + ")"
    assert S.print_fp_literal(FloatBits.from_float(0.5, "single").bits, "single") == "(fp #b0 #b01111110 #b" + "0" * 23 + ")"


def test_print_script_basic():
    assert S.print_script([S.assert_(S.FALSE), S.check_sat()]) == "(assert false)\n(check-sat)\n"
    assert S.print_command(S.declare_sort("BO", 0)) == "(declare-sort BO 0)"


def test_define_fun_with_let():
    x = S.sym("i", S.REAL)
    lv = S.sym("lv", S.REAL)
    body = S.let([("lv", S.app("+", x, S.real_lit(1)))], S.app("*", lv, S.real_lit(Fraction(9, 10))))
    text = S.print_command(S.define_fun("f", [("i", S.REAL)], S.REAL, body))
    assert text == "(define-fun f ((i Real)) Real (let ((lv (+ i 1.0))) (* lv 0.9)))"


def test_nullary_application_prints_bare_symbol():
    init = S.fun_of(S.define_fun("init_root", [], S.BOOL, S.TRUE))
    assert S.print_term(init()) == "init_root"


def test_sort_checks():
    x = S.sym("x", S.INT)
    with pytest.raises(S.SortError):
        S.app("and", x)
    with pytest.raises(S.SortError):
        S.assert_(x)
    with pytest.raises(S.SortError):
        S.check_sat_assuming([S.app("=", x, S.int_lit(1))])


def test_quoting():
    assert S.quote("S1/Delay@0") == "S1/Delay@0"
    assert S.quote("has space") == "|has space|"


@pytest.mark.parametrize("text,sort,value", [
    ("(- (/ 1 2))", S.REAL, Fraction(-1, 2)),
    ("(/ (- 3) 4)", S.REAL, Fraction(-3, 4)),
    ("2.5", S.REAL, Fraction(5, 2)),
    ("(- 7)", S.INT, -7),
    ("#x2C", S.bitvec(8), 44),
    ("#b101", S.bitvec(3), 5),
    ("(_ bv44 8)", S.bitvec(8), 44),
    ("true", S.BOOL, True),
])
def test_parse_value(text, sort, value):
    assert S.parse_value(text, sort) == value


def test_parse_fp_values():
    one = "(fp #b0 #b01111111111 #b" + "0" * 52 + ")"
    assert S.parse_value(one, S.float_sort("double")) == FloatBits.from_float(1.0)
    assert S.parse_value("(_ +oo 11 53)", S.float_sort("double")).is_inf
    assert S.parse_value("(_ NaN 8 24)", S.float_sort("single")).is_nan
    assert S.parse_value("(_ -zero 5 11)", S.float_sort("half")).sign == 1


def test_parse_errors_name_the_fragment():
    with pytest.raises(S.ParseError, match="#b1"):
        S.parse_value("#b1", S.bitvec(8))
    with pytest.raises(S.ParseError):
        S.parse_value("(fp #b0 #b0 #b0)", S.float_sort("double"))


WIDTH = {"half": 16, "single": 32, "double": 64}


def _pattern_with_specials(prec):
    w = WIDTH[prec]
    eb = {"half": 5, "single": 8, "double": 11}[prec]
    top = ((1 << eb) - 1) << (w - eb - 1)
    specials = [0, 1 << (w - 1), top, top | 1 << (w - 1), top | 1, top | (1 << (w - eb - 2))]
    return st.one_of(st.sampled_from(specials), st.integers(min_value=0, max_value=(1 << w) - 1))


@settings(max_examples=1500, deadline=None)
@given(st.sampled_from(["half", "single", "double"]).flatmap(lambda p: st.tuples(st.just(p), _pattern_with_specials(p))))
def test_fp_print_parse_round_trip(case):
    prec, bits = case
    text = S.print_fp_literal(bits, prec)
    assert S.parse_value(text, S.float_sort(prec)).bits == bits


@settings(max_examples=500, deadline=None)
@given(st.fractions(max_denominator=10 ** 6))
def test_real_literal_round_trip(x):
    assert S.parse_value(S.print_term(S.real_lit(x)), S.REAL) == x


@given(st.integers(min_value=-(2 ** 70), max_value=2 ** 70))
def test_int_literal_round_trip(n):
    assert S.parse_value(S.print_term(S.int_lit(n)), S.INT) == n


@given(st.integers(min_value=1, max_value=64).flatmap(lambda w: st.tuples(st.just(w), st.integers(0, (1 << w) - 1))))
def test_bv_literal_round_trip(case):
    w, v = case
    assert S.parse_value(S.print_term(S.bv_lit(v, w)), S.bitvec(w)) == v


def test_printed_script_reparses():
    x = S.sym("x", S.float_sort("double"))
    cmds = [S.declare_const("x", x.sort),
            S.assert_(S.app("fp.lt", x, S.fp_lit(FloatBits.from_float(0.9)))),
            S.check_sat_assuming([S.not_(S.sym("g", S.BOOL))])]
    parsed = S.parse_sexprs(S.print_script(cmds))
    assert [c[0] for c in parsed] == ["declare-const", "assert", "check-sat-assuming"]
