"""SMT-LIB v2.6 terms, commands, printing and value parsing.

Terms carry their sort and are checked as they are built, so anything that
reaches the printer is well-sorted.  Printing is deterministic: the same
command list always yields byte-identical text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from . import floats
from .floats import FloatBits


class SmtError(Exception):
    pass


class SortError(SmtError, TypeError):
    pass


class ParseError(SmtError, ValueError):
    pass


# ---------------------------------------------------------------------------
# sorts


@dataclass(frozen=True)
class Sort:
    kind: str  # Bool | Int | Real | BitVec | Float | Uninterpreted
    width: int = 0
    eb: int = 0
    sb: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind == "Float" and (self.eb, self.sb) not in ((5, 11), (8, 24), (11, 53)):
            raise SortError(f"unsupported float sort ({self.eb}, {self.sb})")

    def __str__(self) -> str:
        if self.kind == "BitVec":
            return f"(_ BitVec {self.width})"
        if self.kind == "Float":
            return {(5, 11): "Float16", (8, 24): "Float32", (11, 53): "Float64"}[(self.eb, self.sb)]
        if self.kind == "Uninterpreted":
            return quote(self.name)
        return self.kind

    @property
    def precision(self) -> str:
        return {(5, 11): "half", (8, 24): "single", (11, 53): "double"}[(self.eb, self.sb)]


BOOL = Sort("Bool")
INT = Sort("Int")
REAL = Sort("Real")


def bitvec(n: int) -> Sort:
    return Sort("BitVec", width=n)


def float_sort(precision: str) -> Sort:
    f = floats.fmt_of(precision)
    return Sort("Float", eb=f.eb, sb=f.sb)


def usort(name: str) -> Sort:
    return Sort("Uninterpreted", name=name)


# ---------------------------------------------------------------------------
# symbols

_SIMPLE = re.compile(r"^[A-Za-z~!@$%^&*_\-+=<>.?/][A-Za-z0-9~!@$%^&*_\-+=<>.?/]*$")
_RESERVED = {
    "!", "_", "as", "BINARY", "DECIMAL", "exists", "forall", "HEXADECIMAL",
    "let", "match", "NUMERAL", "par", "STRING",
}


def quote(name: str) -> str:
    if _SIMPLE.match(name) and name not in _RESERVED:
        return name
    if "|" in name or "\\" in name:
        raise SmtError(f"symbol cannot be quoted: {name!r}")
    return f"|{name}|"


# ---------------------------------------------------------------------------
# terms


@dataclass(frozen=True)
class Term:
    op: str  # "sym", "lit", "let", or an operator/function name
    args: tuple = ()
    sort: Sort = BOOL
    text: str = ""  # symbol name or literal text
    indices: tuple = ()  # for indexed operators like (_ extract 7 0)
    bindings: tuple = ()  # let: ((name, Term), ...)

    def __str__(self) -> str:
        return print_term(self)


def sym(name: str, sort: Sort) -> Term:
    return Term("sym", sort=sort, text=name)


def lit(text: str, sort: Sort) -> Term:
    return Term("lit", sort=sort, text=text)


TRUE = lit("true", BOOL)
FALSE = lit("false", BOOL)


def bool_lit(b: bool) -> Term:
    return TRUE if b else FALSE


def int_lit(n: int) -> Term:
    return lit(str(n), INT) if n >= 0 else Term("-", (lit(str(-n), INT),), INT)


def real_lit(x) -> Term:
    x = Fraction(x)
    neg = x < 0
    a = -x if neg else x
    d = a.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d == 1:
        digits = max(twos, fives)
        scaled = a * 10**digits
        s = str(scaled.numerator)
        if digits == 0:
            text = s + ".0"
        else:
            s = s.rjust(digits + 1, "0")
            text = s[:-digits] + "." + s[-digits:]
        t = lit(text, REAL)
    else:
        t = Term("/", (lit(f"{a.numerator}.0", REAL), lit(f"{a.denominator}.0", REAL)), REAL)
    return Term("-", (t,), REAL) if neg else t


def bv_lit(value: int, width: int) -> Term:
    value &= (1 << width) - 1
    if width % 4 == 0:
        return lit("#x" + format(value, f"0{width // 4}x"), bitvec(width))
    return lit("#b" + format(value, f"0{width}b"), bitvec(width))


def print_fp_literal(bits: int, precision: str) -> str:
    """``(fp #b<sign> #b<exponent> #b<significand>)`` for a raw bit pattern."""
    s, e, m = floats.split_fields(FloatBits(precision, bits))
    return f"(fp #b{s} #b{e} #b{m})"


def fp_lit(v: FloatBits) -> Term:
    return lit(print_fp_literal(v.bits, v.precision), float_sort(v.precision))


_BOOL_OPS = {"and", "or", "xor", "=>"}
_CMP_ARITH = {"<", "<=", ">", ">="}
_ARITH = {"+", "-", "*", "/", "div", "mod", "abs"}
_BV_BIN = {"bvadd", "bvsub", "bvmul", "bvudiv", "bvsdiv", "bvurem", "bvsrem", "bvand", "bvor", "bvxor"}
_BV_CMP = {"bvult", "bvule", "bvugt", "bvuge", "bvslt", "bvsle", "bvsgt", "bvsge"}
_FP_RM = {"fp.add", "fp.sub", "fp.mul", "fp.div"}
_FP_CMP = {"fp.lt", "fp.leq", "fp.gt", "fp.geq", "fp.eq"}
_FP_PRED = {"fp.isNaN", "fp.isInfinite", "fp.isZero", "fp.isNegative", "fp.isPositive"}
_RM_TERMS = {"RNE", "RNA", "RTP", "RTN", "RTZ"}
ROUNDING_MODE = Sort("Uninterpreted", name="RoundingMode")


def rm(mode: str) -> Term:
    if mode not in _RM_TERMS:
        raise SortError(f"unknown rounding mode {mode}")
    return lit(mode, ROUNDING_MODE)


def _need(cond: bool, msg: str):
    if not cond:
        raise SortError(msg)


def app(op: str, *args: Term, indices: tuple = ()) -> Term:
    """Apply a theory operator, inferring and checking sorts."""
    sorts = [a.sort for a in args]
    n = len(args)
    if op == "not":
        _need(n == 1 and sorts[0] == BOOL, "not: Bool expected")
        return Term(op, args, BOOL)
    if op in _BOOL_OPS:
        _need(n >= 1 and all(s == BOOL for s in sorts), f"{op}: Bool arguments expected")
        if n == 1 and op in ("and", "or"):
            return args[0]
        return Term(op, args, BOOL)
    if op in ("=", "distinct"):
        _need(n >= 2 and all(s == sorts[0] for s in sorts), f"{op}: argument sorts differ {sorts}")
        return Term(op, args, BOOL)
    if op == "ite":
        _need(n == 3 and sorts[0] == BOOL and sorts[1] == sorts[2], f"ite: bad sorts {sorts}")
        return Term(op, args, sorts[1])
    if op in _CMP_ARITH:
        _need(n >= 2 and all(s == sorts[0] for s in sorts) and sorts[0] in (INT, REAL), f"{op}: bad sorts {sorts}")
        return Term(op, args, BOOL)
    if op in _ARITH:
        _need(n >= 1 and all(s == sorts[0] for s in sorts) and sorts[0] in (INT, REAL), f"{op}: bad sorts {sorts}")
        if op in ("div", "mod", "abs"):
            _need(sorts[0] == INT, f"{op}: Int expected")
        if op == "/":
            _need(sorts[0] == REAL, "/: Real expected")
        return Term(op, args, sorts[0])
    if op == "to_real":
        _need(n == 1 and sorts[0] == INT, "to_real: Int expected")
        return Term(op, args, REAL)
    if op == "to_int":
        _need(n == 1 and sorts[0] == REAL, "to_int: Real expected")
        return Term(op, args, INT)
    if op in ("bv2nat", "bv2int"):
        _need(n == 1 and sorts[0].kind == "BitVec", f"{op}: BitVec expected")
        return Term(op, args, INT)
    if op in _BV_BIN:
        _need(n == 2 and sorts[0].kind == "BitVec" and sorts[0] == sorts[1], f"{op}: bad sorts {sorts}")
        return Term(op, args, sorts[0])
    if op in ("bvneg", "bvnot"):
        _need(n == 1 and sorts[0].kind == "BitVec", f"{op}: BitVec expected")
        return Term(op, args, sorts[0])
    if op in _BV_CMP:
        _need(n == 2 and sorts[0].kind == "BitVec" and sorts[0] == sorts[1], f"{op}: bad sorts {sorts}")
        return Term(op, args, BOOL)
    if op == "extract":
        hi, lo = indices
        _need(n == 1 and sorts[0].kind == "BitVec" and sorts[0].width > hi >= lo >= 0, "extract: bad indices")
        return Term(op, args, bitvec(hi - lo + 1), indices=indices)
    if op in ("zero_extend", "sign_extend"):
        _need(n == 1 and sorts[0].kind == "BitVec", f"{op}: BitVec expected")
        return Term(op, args, bitvec(sorts[0].width + indices[0]), indices=indices)
    if op in _FP_RM:
        _need(n == 3 and sorts[0] == ROUNDING_MODE and sorts[1].kind == "Float" and sorts[1] == sorts[2],
              f"{op}: bad sorts {sorts}")
        return Term(op, args, sorts[1])
    if op in ("fp.neg", "fp.abs"):
        _need(n == 1 and sorts[0].kind == "Float", f"{op}: Float expected")
        return Term(op, args, sorts[0])
    if op == "fp.roundToIntegral":
        _need(n == 2 and sorts[0] == ROUNDING_MODE and sorts[1].kind == "Float", "fp.roundToIntegral: bad sorts")
        return Term(op, args, sorts[1])
    if op in _FP_CMP:
        _need(n == 2 and sorts[0].kind == "Float" and sorts[0] == sorts[1], f"{op}: bad sorts {sorts}")
        return Term(op, args, BOOL)
    if op in _FP_PRED:
        _need(n == 1 and sorts[0].kind == "Float", f"{op}: Float expected")
        return Term(op, args, BOOL)
    if op == "fp.to_real":
        _need(n == 1 and sorts[0].kind == "Float", "fp.to_real: Float expected")
        return Term(op, args, REAL)
    if op in ("fp.to_sbv", "fp.to_ubv"):
        _need(n == 2 and sorts[0] == ROUNDING_MODE and sorts[1].kind == "Float", f"{op}: bad sorts")
        return Term(op, args, bitvec(indices[0]), indices=indices)
    if op in ("to_fp", "to_fp_unsigned"):
        eb, sb = indices
        target = Sort("Float", eb=eb, sb=sb)
        if n == 2:
            _need(sorts[0] == ROUNDING_MODE and (sorts[1].kind in ("Float", "BitVec") or sorts[1] == REAL),
                  f"{op}: bad sorts {sorts}")
        else:
            _need(False, f"{op}: two arguments expected")
        return Term(op, args, target, indices=indices)
    raise SortError(f"unknown operator {op!r}")


@dataclass(frozen=True)
class FunDecl:
    name: str
    params: tuple[Sort, ...]
    result: Sort

    def __call__(self, *args: Term) -> Term:
        if len(args) != len(self.params):
            raise SortError(f"{self.name}: expected {len(self.params)} arguments, got {len(args)}")
        for i, (a, s) in enumerate(zip(args, self.params)):
            if a.sort != s:
                raise SortError(f"{self.name}: argument {i} has sort {a.sort}, expected {s}")
        return Term(self.name, tuple(args), self.result)


def let(bindings: Sequence[tuple[str, Term]], body: Term) -> Term:
    if not bindings:
        return body
    return Term("let", (body,), body.sort, bindings=tuple(bindings))


def and_(*terms: Term) -> Term:
    flat = []
    for t in terms:
        if t is TRUE or t == TRUE:
            continue
        if t.op == "and":
            flat.extend(t.args)
        else:
            flat.append(t)
    if not flat:
        return TRUE
    return app("and", *flat) if len(flat) > 1 else flat[0]


def not_(t: Term) -> Term:
    if t == TRUE:
        return FALSE
    if t == FALSE:
        return TRUE
    if t.op == "not":
        return t.args[0]
    return app("not", t)


# ---------------------------------------------------------------------------
# commands


@dataclass(frozen=True)
class Command:
    kind: str
    name: str = ""
    sort: Sort | None = None
    params: tuple = ()
    body: Term | None = None
    terms: tuple = ()
    text: str = ""


def declare_const(name: str, sort: Sort) -> Command:
    return Command("declare-const", name=name, sort=sort)


def declare_fun(name: str, args: Sequence[Sort], sort: Sort) -> Command:
    return Command("declare-fun", name=name, params=tuple(args), sort=sort)


def declare_sort(name: str, arity: int = 0) -> Command:
    return Command("declare-sort", name=name, text=str(arity))


def define_fun(name: str, params: Sequence[tuple[str, Sort]], sort: Sort, body: Term) -> Command:
    if body.sort != sort:
        raise SortError(f"define-fun {name}: body sort {body.sort} != {sort}")
    return Command("define-fun", name=name, params=tuple(params), sort=sort, body=body)


def assert_(t: Term) -> Command:
    if t.sort != BOOL:
        raise SortError("assert: Bool term expected")
    return Command("assert", body=t)


def check_sat() -> Command:
    return Command("check-sat")


def check_sat_assuming(literals: Sequence[Term]) -> Command:
    for t in literals:
        inner = t.args[0] if t.op == "not" else t
        if inner.sort != BOOL or inner.op not in ("sym", "lit"):
            raise SortError(f"check-sat-assuming takes literals, got {print_term(t)}")
    return Command("check-sat-assuming", terms=tuple(literals))


def get_value(terms: Sequence[Term]) -> Command:
    return Command("get-value", terms=tuple(terms))


def set_option(key: str, value: str) -> Command:
    return Command("set-option", name=key, text=value)


def push(n: int = 1) -> Command:
    return Command("push", text=str(n))


def pop(n: int = 1) -> Command:
    return Command("pop", text=str(n))


def comment(text: str) -> Command:
    return Command("comment", text=text)


def fun_of(cmd: Command) -> FunDecl:
    """The callable signature of a define-fun/declare-fun command."""
    if cmd.kind == "define-fun":
        return FunDecl(cmd.name, tuple(s for _, s in cmd.params), cmd.sort)
    if cmd.kind == "declare-fun":
        return FunDecl(cmd.name, cmd.params, cmd.sort)
    raise SmtError(f"{cmd.kind} does not declare a function")


# ---------------------------------------------------------------------------
# printing


def print_term(t: Term) -> str:
    if t.op == "sym":
        return quote(t.text)
    if t.op == "lit":
        return t.text
    if t.op == "let":
        binds = " ".join(f"({quote(n)} {print_term(v)})" for n, v in t.bindings)
        return f"(let ({binds}) {print_term(t.args[0])})"
    head = _head(t)
    if not t.args:
        # nullary function (e.g. the init predicate of a stateless system)
        return head
    return f"({head} {' '.join(print_term(a) for a in t.args)})"


def _head(t: Term) -> str:
    if t.indices:
        return f"(_ {t.op} {' '.join(map(str, t.indices))})"
    return quote(t.op) if t.op not in _KEEP else t.op


_KEEP = {"=>", "<", "<=", ">", ">=", "=", "+", "-", "*", "/"}

WIDTH = 88


def _pretty(t: Term, indent: int) -> str:
    flat = print_term(t)
    if len(flat) + indent <= WIDTH:
        return flat
    pad = " " * (indent + 2)
    if t.op == "let":
        binds = []
        for n, v in t.bindings:
            binds.append(f"({quote(n)} {_pretty(v, indent + 7 + len(quote(n)))})")
        head = f"(let ({binds[0]}" + "".join(f"\n{' ' * (indent + 6)}{b}" for b in binds[1:]) + ")"
        return f"{head}\n{pad}{_pretty(t.args[0], indent + 2)})"
    if t.op in ("sym", "lit") or not t.args:
        return flat
    parts = [_pretty(a, indent + 2) for a in t.args]
    return f"({_head(t)}" + "".join(f"\n{pad}{p}" for p in parts) + ")"


def print_command(c: Command) -> str:
    k = c.kind
    if k == "comment":
        return "\n".join(f";; {line}" if line else ";;" for line in c.text.split("\n"))
    if k == "declare-const":
        return f"(declare-const {quote(c.name)} {c.sort})"
    if k == "declare-fun":
        return f"(declare-fun {quote(c.name)} ({' '.join(map(str, c.params))}) {c.sort})"
    if k == "declare-sort":
        return f"(declare-sort {quote(c.name)} {c.text})"
    if k == "define-fun":
        params = " ".join(f"({quote(n)} {s})" for n, s in c.params)
        head = f"(define-fun {quote(c.name)} ({params}) {c.sort}"
        flat = f"{head} {print_term(c.body)})"
        if len(flat) <= WIDTH:
            return flat
        return f"{head}\n  {_pretty(c.body, 2)})"
    if k == "assert":
        flat = f"(assert {print_term(c.body)})"
        return flat if len(flat) <= WIDTH else f"(assert\n  {_pretty(c.body, 2)})"
    if k == "check-sat":
        return "(check-sat)"
    if k == "check-sat-assuming":
        return f"(check-sat-assuming ({' '.join(print_term(t) for t in c.terms)}))"
    if k == "get-value":
        return f"(get-value ({' '.join(print_term(t) for t in c.terms)}))"
    if k == "set-option":
        return f"(set-option :{c.name} {c.text})"
    if k in ("push", "pop"):
        return f"({k} {c.text})"
    raise SmtError(f"unknown command {k}")


def print_script(cmds: Sequence[Command]) -> str:
    return "".join(print_command(c) + "\n" for c in cmds)


# ---------------------------------------------------------------------------
# parsing


_TOKEN = re.compile(r'\s*(?:(;[^\n]*)|(\()|(\))|(\|[^|]*\|)|("(?:[^"]|"")*")|([^\s()|";]+))')


def parse_sexprs(text: str) -> list:
    """Parse all S-expressions in ``text`` into nested lists of strings."""
    stack: list[list] = [[]]
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ParseError(f"cannot tokenize near {text[pos:pos + 20]!r}")
        pos = m.end()
        cmt, op, cl, qsym, string, atom = m.groups()
        if cmt is not None:
            continue
        if op:
            stack.append([])
        elif cl:
            if len(stack) == 1:
                raise ParseError("unbalanced ')'")
            done = stack.pop()
            stack[-1].append(done)
        elif qsym is not None:
            stack[-1].append(qsym[1:-1])
        elif string is not None:
            stack[-1].append(string)
        elif atom is not None:
            stack[-1].append(atom)
    if len(stack) != 1:
        raise ParseError("unbalanced '('")
    return stack[0]


def parse_sexpr(text: str):
    items = parse_sexprs(text)
    if len(items) != 1:
        raise ParseError(f"expected one S-expression in {text!r}")
    return items[0]


def to_text(sx) -> str:
    if isinstance(sx, list):
        return "(" + " ".join(to_text(x) for x in sx) + ")"
    return sx


def _bits_of(tok: str) -> tuple[int, int]:
    if tok.startswith("#b"):
        return int(tok[2:], 2), len(tok) - 2
    if tok.startswith("#x"):
        return int(tok[2:], 16), 4 * (len(tok) - 2)
    raise ParseError(f"not a bit-vector literal: {tok}")


def _number(sx):
    if isinstance(sx, str):
        if re.fullmatch(r"\d+", sx):
            return int(sx)
        if re.fullmatch(r"\d+\.\d*", sx):
            return Fraction(sx)
        raise ParseError(f"not a numeral: {sx}")
    if sx and sx[0] == "-" and len(sx) == 2:
        return -_number(sx[1])
    if sx and sx[0] == "-" and len(sx) > 2:
        v = _number(sx[1])
        for x in sx[2:]:
            v -= _number(x)
        return v
    if sx and sx[0] == "/" and len(sx) == 3:
        return Fraction(_number(sx[1])) / Fraction(_number(sx[2]))
    if sx and sx[0] == "+" and len(sx) >= 2:
        return sum(_number(x) for x in sx[1:])
    raise ParseError(f"not a numeric value: {to_text(sx)}")


def parse_value(text, sort: Sort):
    """Turn a solver value (text or parsed S-expression) into a Python value.

    Int -> int, Real -> Fraction, Bool -> bool, BitVec -> unsigned int,
    Float -> FloatBits.
    """
    sx = parse_sexpr(text) if isinstance(text, str) else text
    try:
        if sort == BOOL:
            if sx in ("true", "false"):
                return sx == "true"
            raise ParseError(f"not a Boolean: {to_text(sx)}")
        if sort == INT:
            v = _number(sx)
            if isinstance(v, Fraction) and v.denominator != 1:
                raise ParseError(f"not an integer: {to_text(sx)}")
            return int(v)
        if sort == REAL:
            return Fraction(_number(sx))
        if sort.kind == "BitVec":
            if isinstance(sx, list) and len(sx) == 3 and sx[0] == "_" and sx[1].startswith("bv"):
                value, width = int(sx[1][2:]), int(sx[2])
            else:
                value, width = _bits_of(sx)
            if width != sort.width:
                raise ParseError(f"width {width} != {sort.width} in {to_text(sx)}")
            return value
        if sort.kind == "Float":
            prec = sort.precision
            f = floats.fmt_of(prec)
            if isinstance(sx, list) and sx and sx[0] == "fp":
                s, _ = _bits_of(sx[1])
                e, ew = _bits_of(sx[2])
                m, mw = _bits_of(sx[3])
                if ew != f.eb or mw < f.sb - 1 or m >> (f.sb - 1):
                    raise ParseError(f"field widths do not match {prec}: {to_text(sx)}")
                return FloatBits(prec, (s << (f.width - 1)) | (e << (f.sb - 1)) | m)
            if isinstance(sx, list) and len(sx) == 4 and sx[0] == "_":
                if (int(sx[2]), int(sx[3])) != (f.eb, f.sb):
                    raise ParseError(f"special value sort mismatch: {to_text(sx)}")
                special = {"+oo": floats.inf(prec), "-oo": floats.inf(prec, True), "NaN": floats.nan(prec),
                           "+zero": floats.zero(prec), "-zero": floats.zero(prec, True)}
                if sx[1] in special:
                    return special[sx[1]]
        raise ParseError(f"unsupported value for {sort}: {to_text(sx)}")
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"cannot parse {to_text(sx)!r} as {sort}: {exc}") from None


def value_term(v, sort: Sort) -> Term:
    """Literal term for a Python value of the given sort."""
    if sort == BOOL:
        return bool_lit(bool(v))
    if sort == INT:
        return int_lit(int(v))
    if sort == REAL:
        return real_lit(v)
    if sort.kind == "BitVec":
        return bv_lit(int(v), sort.width)
    if sort.kind == "Float":
        if not isinstance(v, FloatBits):
            v = floats.round_fraction(Fraction(v), sort.precision)
        return fp_lit(v)
    raise SmtError(f"no literal syntax for sort {sort}")
