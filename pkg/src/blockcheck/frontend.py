"""Load, validate and type the JSON model dialect and property files."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from .core import (
    DOUBLE,
    Block,
    DataType,
    Line,
    Model,
    ModelError,
    Property,
    Subsystem,
    dtype_flatten,
    looks_numeric,
    parse_number,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    location: str  # subsystem path + block id, "/"-joined ("" = model)
    message: str
    code: str

    def __str__(self) -> str:
        where = self.location or "<model>"
        return f"{self.severity}[{self.code}] {where}: {self.message}"


class FrontendError(ModelError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


# ---------------------------------------------------------------------------
# block catalogue

SUPPORTED = {
    "Inport", "Outport", "Constant", "Ground", "Terminator", "Add", "Sum", "Sub",
    "Gain", "Product", "Saturate", "Saturation", "MinMax", "Abs", "UnaryMinus",
    "UnitDelay", "Delay", "Switch", "RelationalOperator", "CompareToConstant",
    "CompareToZero", "Logic", "DataTypeConversion", "Mux", "Demux", "BusCreator",
    "BusSelector", "SubSystem", "EnablePort", "TriggerPort", "RateTransition",
}

ALIASES = {"Sum": "Add", "Saturation": "Saturate"}

REL_OPS = {"<", "<=", ">", ">=", "==", "~=", "!="}


def canonical_type(t: str) -> str:
    return ALIASES.get(t, t)


def signs_of(b: Block) -> str:
    if b.type == "Sub":
        return b.params.get("signs", "+-")
    return b.params.get("signs", "++")


def input_count(b: Block) -> int:
    t = canonical_type(b.type)
    if b.stub:
        return int(b.params.get("inputs", 1))
    if t in ("Inport", "Constant", "Ground", "EnablePort", "TriggerPort"):
        return 0
    if t in ("Add", "Sub"):
        return len(signs_of(b))
    if t == "Product":
        return len(b.params.get("ops", "**"))
    if t == "MinMax":
        return int(b.params.get("inputs", 2))
    if t == "Switch":
        return 3
    if t == "RelationalOperator":
        return 2
    if t == "Logic":
        op = b.params.get("op", "AND").upper()
        return 1 if op == "NOT" else int(b.params.get("inputs", 2))
    if t in ("Mux", "BusCreator"):
        return int(b.params.get("inputs", 2))
    if t == "SubSystem":
        return sum(1 for x in b.system.blocks if x.type == "Inport")
    return 1


def output_count(b: Block) -> int:
    t = canonical_type(b.type)
    if b.stub:
        return int(b.params.get("outputs", 1))
    if t in ("Outport", "Terminator", "EnablePort", "TriggerPort"):
        return 0
    if t == "Demux":
        return int(b.params.get("outputs", 2))
    if t == "BusSelector":
        return len(b.params.get("signals", []))
    if t == "SubSystem":
        return sum(1 for x in b.system.blocks if x.type == "Outport")
    return 1


def control_port(sub: Subsystem) -> tuple[str, Block] | None:
    """("enable"|"trigger", port block) if the subsystem is conditionally executed."""
    for x in sub.blocks:
        if x.type == "EnablePort":
            return "enable", x
        if x.type == "TriggerPort":
            return "trigger", x
    return None


def port_blocks(sub: Subsystem, kind: str) -> list[Block]:
    """Inport/Outport blocks ordered by their port number."""
    ports = [x for x in sub.blocks if x.type == kind]
    return sorted(ports, key=lambda x: (int(x.params.get("port", 0)) or ports.index(x) + 1))


# ---------------------------------------------------------------------------
# loading


def _norm_param(v):
    if isinstance(v, float):
        return Fraction(repr(v))
    if isinstance(v, str) and looks_numeric(v):
        return parse_number(v)
    if isinstance(v, list):
        return [_norm_param(x) for x in v]
    if isinstance(v, dict):
        return {k: _norm_param(x) for k, x in v.items()}
    return v


def _parse_port(text: str, where: str, diags: list) -> tuple[str, Any] | None:
    if not isinstance(text, str) or "/" not in text:
        diags.append(Diagnostic("error", where, f"bad port reference {text!r}", "schema"))
        return None
    bid, port = text.rsplit("/", 1)
    if port in ("enable", "trigger"):
        return bid, port
    try:
        return bid, int(port)
    except ValueError:
        diags.append(Diagnostic("error", where, f"bad port index in {text!r}", "schema"))
        return None


def _load_system(obj, path: tuple[str, ...], diags: list, unknown: list) -> Subsystem:
    where = "/".join(path)
    if not isinstance(obj, dict) or not isinstance(obj.get("blocks"), list):
        diags.append(Diagnostic("error", where, "system must have a 'blocks' list", "schema"))
        return Subsystem((), (), path)
    blocks = []
    seen = set()
    for raw in obj["blocks"]:
        if not isinstance(raw, dict) or "id" not in raw or "type" not in raw:
            diags.append(Diagnostic("error", where, f"block needs 'id' and 'type': {raw!r}", "schema"))
            continue
        bid = str(raw["id"])
        loc = "/".join((*path, bid))
        if "/" in bid:
            diags.append(Diagnostic("error", loc, "block id must not contain '/'", "schema"))
        if bid in seen:
            diags.append(Diagnostic("error", loc, f"duplicate block id {bid!r}", "duplicate-id"))
            continue
        seen.add(bid)
        btype = str(raw["type"])
        params = _norm_param(dict(raw.get("params") or {}))
        out_type = None
        if raw.get("out_type") is not None:
            try:
                out_type = DataType.parse(str(raw["out_type"]))
            except ValueError as exc:
                diags.append(Diagnostic("error", loc, str(exc), "schema"))
        rate = raw.get("rate")
        if rate is not None and (not isinstance(rate, int) or isinstance(rate, bool) or rate < 1):
            diags.append(Diagnostic("error", loc, f"rate must be a positive integer, got {rate!r}", "rate"))
            rate = None
        system = None
        if btype == "SubSystem":
            if "system" not in raw:
                diags.append(Diagnostic("error", loc, "SubSystem block needs a nested 'system'", "schema"))
                continue
            system = _load_system(raw["system"], (*path, bid), diags, unknown)
        elif "system" in raw:
            diags.append(Diagnostic("error", loc, "only SubSystem blocks may nest a system", "schema"))
        stub = btype not in SUPPORTED
        if stub:
            unknown.append(Diagnostic("warning", loc, f"block type {btype!r} is not supported; stubbed", "stubbed"))
        blocks.append(Block(bid, btype, params, out_type, rate, system, stub))
    lines = []
    for raw in obj.get("lines", []):
        if not isinstance(raw, dict) or "src" not in raw or "dst" not in raw:
            diags.append(Diagnostic("error", where, f"line needs 'src' and 'dst': {raw!r}", "schema"))
            continue
        src = _parse_port(raw["src"], where, diags)
        dsts_raw = raw["dst"] if isinstance(raw["dst"], list) else [raw["dst"]]
        dsts = [_parse_port(d, where, diags) for d in dsts_raw]
        if src is None or any(d is None for d in dsts):
            continue
        lines.append(Line(src, tuple(dsts)))
    return Subsystem(tuple(blocks), tuple(lines), path)


def _check_connectivity(sub: Subsystem, diags: list):
    by_id = {b.id: b for b in sub.blocks}
    driven: dict = {}
    for ln in sub.lines:
        sbid, sport = ln.src
        loc = "/".join((*sub.path, sbid))
        if sbid not in by_id:
            diags.append(Diagnostic("error", loc, f"line source block {sbid!r} does not exist", "dangling"))
            continue
        if not isinstance(sport, int) or not 1 <= sport <= output_count(by_id[sbid]):
            diags.append(Diagnostic("error", loc, f"block {sbid!r} has no output port {sport}", "dangling"))
        for dbid, dport in ln.dsts:
            dloc = "/".join((*sub.path, dbid))
            if dbid not in by_id:
                diags.append(Diagnostic("error", dloc, f"line destination block {dbid!r} does not exist", "dangling"))
                continue
            db = by_id[dbid]
            if isinstance(dport, str):
                ok = db.system is not None and (ctl := control_port(db.system)) is not None and ctl[0] == dport
            else:
                ok = 1 <= dport <= input_count(db)
            if not ok:
                diags.append(Diagnostic("error", dloc, f"block {dbid!r} has no input port {dport}", "dangling"))
                continue
            if (dbid, dport) in driven:
                diags.append(Diagnostic("error", dloc, f"input {dport} of {dbid!r} is driven twice", "multi-driver"))
            driven[(dbid, dport)] = ln.src
    for b in sub.blocks:
        loc = "/".join((*sub.path, b.id))
        needed = list(range(1, input_count(b) + 1))
        if b.system is not None and (ctl := control_port(b.system)) is not None:
            needed.append(ctl[0])
        for p in needed:
            if (b.id, p) not in driven:
                diags.append(Diagnostic("error", loc, f"input {p} of {b.id!r} is not connected", "unconnected"))
        if b.system is not None:
            _check_connectivity(b.system, diags)


def _bus_table(raw, diags) -> dict:
    table = {}
    for name, members in (raw or {}).items():
        items = []
        for m in members:
            if isinstance(m, dict):
                mname, mtype = m.get("name"), m.get("type")
            else:
                mname, mtype = m
            try:
                items.append((str(mname), DataType.parse(str(mtype))))
            except ValueError as exc:
                diags.append(Diagnostic("error", f"bus:{name}", str(exc), "schema"))
        table[str(name)] = items
    # acyclicity
    def visit(n, stack):
        if n in stack:
            diags.append(Diagnostic("error", f"bus:{n}", "bus type is recursive", "bus-cycle"))
            return
        for _, t in table.get(n, ()):
            if t.is_bus:
                if t.bus_name not in table:
                    diags.append(Diagnostic("error", f"bus:{n}", f"unknown bus type {t.bus_name!r}", "bus"))
                else:
                    visit(t.bus_name, stack | {n})
    for n in table:
        visit(n, frozenset())
    return table


def load_model(src, diagnostics: list | None = None) -> Model:
    """Parse a model from JSON text/bytes or an already-decoded dict.

    Errors raise :class:`FrontendError`; warnings (e.g. stubbed blocks) are
    appended to ``diagnostics`` when given.
    """
    diags: list[Diagnostic] = []
    if isinstance(src, (bytes, bytearray)):
        src = src.decode("utf-8")
    if isinstance(src, str):
        try:
            src = json.loads(src, parse_float=Fraction)
        except json.JSONDecodeError as exc:
            raise FrontendError([Diagnostic("error", "", f"malformed JSON: {exc}", "json")]) from None
    if not isinstance(src, dict):
        raise FrontendError([Diagnostic("error", "", "model must be a JSON object", "schema")])
    for key in ("name", "system"):
        if key not in src:
            diags.append(Diagnostic("error", "", f"missing top-level key {key!r}", "schema"))
    if diags:
        raise FrontendError(diags)
    try:
        st = parse_number(src.get("sample_time", 1))
        if isinstance(st, bool) or st <= 0:
            raise ValueError
    except (ValueError, ZeroDivisionError):
        raise FrontendError([Diagnostic("error", "", "sample_time must be a positive number", "schema")]) from None
    warnings: list[Diagnostic] = []
    buses = _bus_table(src.get("bus_types"), diags)
    system = _load_system(src["system"], (), diags, warnings)
    if not diags:
        _check_connectivity(system, diags)
    for s in _walk(system):
        for b in s.blocks:
            if b.out_type is not None and b.out_type.is_bus and b.out_type.bus_name not in buses:
                diags.append(Diagnostic("error", "/".join((*s.path, b.id)),
                                        f"unknown bus type {b.out_type.bus_name!r}", "bus"))
            if b.system is not None:
                kinds = [x.type for x in b.system.blocks if x.type in ("EnablePort", "TriggerPort")]
                if len(kinds) > 1:
                    diags.append(Diagnostic("error", "/".join((*s.path, b.id)),
                                            "at most one EnablePort/TriggerPort per subsystem", "schema"))
    if diags:
        raise FrontendError(diags)
    for w in warnings:
        log.warning("%s", w)
    if diagnostics is not None:
        diagnostics.extend(warnings)
    return Model(str(src["name"]), Fraction(st), buses, system)


def _walk(s: Subsystem):
    yield s
    for b in s.blocks:
        if b.system is not None:
            yield from _walk(b.system)


def _dump_param(v):
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return int(v)
        return _decimal_text(v)
    if isinstance(v, list):
        return [_dump_param(x) for x in v]
    if isinstance(v, dict):
        return {k: _dump_param(x) for k, x in v.items()}
    return v


def _decimal_text(v: Fraction) -> str:
    d, twos, fives = v.denominator, 0, 0
    while d % 2 == 0:
        d, twos = d // 2, twos + 1
    while d % 5 == 0:
        d, fives = d // 5, fives + 1
    if d != 1:
        return f"{v.numerator}/{v.denominator}"
    digits = max(twos, fives)
    n = abs(v.numerator) * (10**digits // v.denominator)
    s = str(n).rjust(digits + 1, "0")
    return ("-" if v < 0 else "") + s[:-digits] + "." + s[-digits:]


def _port_text(p) -> str:
    return f"{p[0]}/{p[1]}"


def _dump_system(s: Subsystem) -> dict:
    blocks = []
    for b in s.blocks:
        d: dict[str, Any] = {"id": b.id, "type": b.type}
        if b.params:
            d["params"] = _dump_param(b.params)
        if b.out_type is not None:
            d["out_type"] = str(b.out_type)
        if b.rate is not None:
            d["rate"] = b.rate
        if b.system is not None:
            d["system"] = _dump_system(b.system)
        blocks.append(d)
    lines = [{"src": _port_text(ln.src), "dst": [_port_text(x) for x in ln.dsts]} for ln in s.lines]
    return {"blocks": blocks, "lines": lines}


def dump_model(m: Model) -> dict:
    """Inverse of :func:`load_model` (as a JSON-ready dict)."""
    st = m.sample_time
    out: dict[str, Any] = {"name": m.name, "sample_time": int(st) if st.denominator == 1 else _decimal_text(st)}
    if m.bus_types:
        out["bus_types"] = {n: [{"name": k, "type": str(t)} for k, t in ms] for n, ms in m.bus_types.items()}
    out["system"] = _dump_system(m.system)
    return out


# ---------------------------------------------------------------------------
# type inference


PortKey = tuple[tuple[str, ...], str, int]  # (subsystem path, block id, out port)


@dataclass
class TypedModel:
    model: Model
    out_types: dict = field(default_factory=dict)  # PortKey -> DataType
    diagnostics: list = field(default_factory=list)

    def out_type(self, path: tuple[str, ...], bid: str, port: int = 1) -> DataType:
        return self.out_types[(tuple(path), bid, port)]

    def in_type(self, sub: Subsystem, bid: str, port) -> DataType:
        src = driver(sub, bid, port)
        return self.out_types[(sub.path, src[0], src[1])]

    @property
    def bus_types(self) -> dict:
        return self.model.bus_types


def driver(sub: Subsystem, bid: str, port) -> tuple[str, int]:
    for ln in sub.lines:
        if (bid, port) in ln.dsts:
            return ln.src
    raise KeyError(f"{'/'.join((*sub.path, bid))} input {port} is not connected")


class _Conflict(Exception):
    pass


def _value_shape(v) -> tuple[tuple[int, ...], bool]:
    """(dims, all-boolean) of a literal parameter value."""
    if isinstance(v, list):
        if v and isinstance(v[0], list):
            rows = len(v)
            cols = len(v[0])
            if any(not isinstance(r, list) or len(r) != cols for r in v):
                raise _Conflict("ragged matrix literal")
            flat = [x for r in v for x in r]
            return (rows, cols), all(isinstance(x, bool) for x in flat)
        return (len(v),), all(isinstance(x, bool) for x in v)
    return (), isinstance(v, bool)


def _broadcast(types: list[DataType]) -> tuple[int, ...]:
    dims = ()
    for t in types:
        if t.is_bus:
            raise _Conflict("bus signal where a numeric signal is expected")
        if t.dims:
            if dims and t.dims != dims:
                raise _Conflict(f"dimension mismatch {dims} vs {t.dims}")
            dims = t.dims
    return dims


def _common_base(types: list[DataType]) -> str | None:
    bases = {t.base for t in types}
    if len(bases) > 1:
        raise _Conflict("input types differ: " + ", ".join(sorted(str(t) for t in types)))
    return bases.pop() if bases else None


def _rule(b: Block, ins: list[DataType | None], tm: TypedModel, sub: Subsystem) -> list[DataType | None]:
    """Output types given (possibly partially known) input types."""
    t = canonical_type(b.type)
    known = [x for x in ins if x is not None]
    full = len(known) == len(ins)
    ot = b.out_type
    if b.stub:
        return [ot] * output_count(b)
    if t == "Inport":
        if sub.path:
            parent = tm.model.subsystem(sub.path[:-1])
            port = port_blocks(sub, "Inport").index(b) + 1
            try:
                src = driver(parent, sub.path[-1], port)
            except KeyError:
                return [ot]
            pt = tm.out_types.get((parent.path, src[0], src[1]))
            if pt is not None and ot is not None and pt != ot:
                raise _Conflict(f"inport annotated {ot} but driven by {pt}")
            return [pt or ot]
        return [ot]
    if t in ("Constant", "Ground"):
        v = b.params.get("value", 0)
        dims, is_bool = _value_shape(v)
        base = ot.base if ot is not None else ("boolean" if is_bool and t == "Constant" else "double")
        if ot is not None and ot.dims and ot.dims != dims and dims:
            raise _Conflict(f"constant shape {dims} does not match {ot}")
        return [DataType(base, dims or (ot.dims if ot else ()))]
    if t in ("Add", "Sub") and len(ins) == 1:
        if not known:
            return [None]
        return [DataType(ot.base if ot else known[0].base)]
    if t in ("Add", "Sub", "Product", "Abs", "UnaryMinus", "Gain", "Saturate", "MinMax"):
        if t == "MinMax" and len(ins) == 1:
            return [DataType(ot.base if ot else known[0].base)] if known else [None]
        if not known:
            return [ot] if ot is not None and ot.dims else [None]
        if ot is None:
            base = _common_base(known)
        else:
            base = ot.base
            if full:
                _broadcast(known)
        if t == "Gain" and isinstance(b.params.get("gain"), list):
            gdims, _ = _value_shape(b.params["gain"])
            dims = _broadcast(known + [DataType("double", gdims)])
        else:
            dims = _broadcast(known) if full or t not in ("Add", "Sub", "Product", "MinMax") else _broadcast(known)
        return [DataType(base, dims)]
    if t in ("UnitDelay", "Delay", "RateTransition"):
        if ot is not None:
            return [ot]
        return [known[0]] if known else [None]
    if t == "Switch":
        data = [x for x in (ins[0], ins[2]) if x is not None]
        if ot is not None:
            return [ot]
        if not data:
            return [None]
        if len(data) == 2 and data[0] != data[1]:
            raise _Conflict(f"switch data inputs differ: {data[0]} vs {data[1]}")
        return [data[0]]
    if t in ("RelationalOperator", "CompareToConstant", "CompareToZero", "Logic"):
        if not full:
            return [None]
        return [DataType("boolean", _broadcast(known))]
    if t == "DataTypeConversion":
        if ot is None:
            raise _Conflict("DataTypeConversion needs out_type")
        if not known:
            return [None]
        return [DataType(ot.base, known[0].dims)]
    if t == "Mux":
        if not full:
            return [None]
        base = ot.base if ot else _common_base(known)
        return [DataType(base, (sum(x.size for x in known),))]
    if t == "Demux":
        if not known:
            return [None] * output_count(b)
        n = output_count(b)
        size = known[0].size
        if size % n:
            raise _Conflict(f"cannot split {size} elements into {n} outputs")
        each = size // n
        return [DataType(known[0].base, (each,) if each > 1 else ())] * n
    if t == "BusCreator":
        name = b.params.get("bus") or (ot.bus_name if ot is not None and ot.is_bus else None)
        if name is None:
            raise _Conflict("BusCreator needs a 'bus' parameter")
        return [DataType(f"bus:{name}")]
    if t == "BusSelector":
        if not known:
            return [None] * output_count(b)
        bt = known[0]
        if not bt.is_bus:
            raise _Conflict(f"BusSelector input is {bt}, not a bus")
        members = dict(tm.bus_types[bt.bus_name])
        outs = []
        for sname in b.params.get("signals", []):
            if sname not in members:
                raise _Conflict(f"bus {bt.bus_name} has no member {sname!r}")
            outs.append(members[sname])
        return outs
    if t == "SubSystem":
        outs = []
        for ob in port_blocks(b.system, "Outport"):
            try:
                src = driver(b.system, ob.id, 1)
            except KeyError:
                outs.append(None)
                continue
            outs.append(tm.out_types.get((b.system.path, src[0], src[1])))
        return outs
    return [None] * output_count(b)


def _check_block(b: Block, ins: list[DataType], outs: list[DataType], tm: TypedModel):
    t = canonical_type(b.type)
    if b.stub:
        return
    if t in ("Add", "Sub", "Product", "MinMax", "RelationalOperator") and len(ins) > 1:
        if b.out_type is None or t == "RelationalOperator":
            _common_base(ins)
        _broadcast(ins)
    if t == "Switch":
        if ins[0] != ins[2] and b.out_type is None:
            raise _Conflict(f"switch data inputs differ: {ins[0]} vs {ins[2]}")
        if ins[1].dims:
            raise _Conflict("switch control input must be scalar")
    if t == "BusCreator":
        members = tm.bus_types[outs[0].bus_name]
        if len(members) != len(ins):
            raise _Conflict(f"bus {outs[0].bus_name} has {len(members)} members, block has {len(ins)} inputs")
        for (mname, mt), it in zip(members, ins):
            if mt != it:
                raise _Conflict(f"member {mname} is {mt} but input is {it}")
    if t in ("Gain", "Abs", "UnaryMinus", "Saturate", "Add", "Sub", "Product", "MinMax") and ins:
        if any(x.is_bool for x in ins) or outs[0].is_bool:
            raise _Conflict(f"{t} does not accept boolean signals")
    if t == "Logic" and any(x.is_bus for x in ins):
        raise _Conflict("Logic does not accept buses")


def infer_types(m: Model, diagnostics: list | None = None) -> TypedModel:
    """Propagate port types through the whole hierarchy to a fixed point.

    Ports no annotation reaches default to double (with a warning).
    """
    if isinstance(m, TypedModel):
        m = m.model
    tm = TypedModel(m)
    diags: list[Diagnostic] = []
    subs = list(_walk(m.system))

    def ins_of(sub, b):
        keys = list(range(1, input_count(b) + 1))
        res = []
        for p in keys:
            src = driver(sub, b.id, p)
            res.append(tm.out_types.get((sub.path, src[0], src[1])))
        return res

    def sweep() -> bool:
        changed = False
        for sub in subs:
            for b in sub.blocks:
                n = output_count(b)
                if n == 0 or all((sub.path, b.id, p) in tm.out_types for p in range(1, n + 1)):
                    continue
                try:
                    outs = _rule(b, ins_of(sub, b), tm, sub)
                except _Conflict as exc:
                    raise FrontendError([Diagnostic("error", "/".join((*sub.path, b.id)), str(exc), "type")])
                for p, ty in enumerate(outs, 1):
                    if ty is not None and (sub.path, b.id, p) not in tm.out_types:
                        tm.out_types[(sub.path, b.id, p)] = ty
                        changed = True
        return changed

    while True:
        while sweep():
            pass
        pending = [
            (sub, b, p)
            for sub in subs
            for b in sub.blocks
            for p in range(1, output_count(b) + 1)
            if (sub.path, b.id, p) not in tm.out_types
        ]
        if not pending:
            break
        # prefer defaulting state-holding blocks and sources, so feedback loops resolve
        pending.sort(key=lambda x: canonical_type(x[1].type) not in ("UnitDelay", "Delay", "Inport") and not x[1].stub)
        sub, b, p = pending[0]
        tm.out_types[(sub.path, b.id, p)] = DOUBLE
        diags.append(Diagnostic("warning", "/".join((*sub.path, b.id)),
                                f"no type information reaches output {p}; defaulting to double", "default-double"))

    # verification pass: every rule must agree with the fixed point
    for sub in subs:
        for b in sub.blocks:
            loc = "/".join((*sub.path, b.id))
            ins = ins_of(sub, b)
            outs = [tm.out_types[(sub.path, b.id, p)] for p in range(1, output_count(b) + 1)]
            try:
                again = _rule(b, ins, tm, sub)
                for p, (want, got) in enumerate(zip(again, outs), 1):
                    if want is not None and want != got:
                        raise _Conflict(f"output {p} resolves to {got} but block rule gives {want}")
                _check_block(b, ins, outs, tm)
            except _Conflict as exc:
                raise FrontendError([Diagnostic("error", loc, str(exc), "type")]) from None
            if canonical_type(b.type) == "Outport" and sub.path == () and ins[0] is None:
                raise FrontendError([Diagnostic("error", loc, "untyped outport", "type")])
            for t in outs:
                if t.is_bus:
                    dtype_flatten(t, m.bus_types)
    for d in diags:
        log.warning("%s", d)
    tm.diagnostics = diags
    if diagnostics is not None:
        diagnostics.extend(diags)
    return tm


# ---------------------------------------------------------------------------
# properties

_PTOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)|(?P<kw>sig|state)\s*\(|(?P<word>true|false)\b"
    r"|(?P<op>\|\||&&|<=|>=|==|!=|[<>+\-*/!()]))"
)


@dataclass(frozen=True)
class SignalRef:
    """A resolved scalar signal: block output (or delay state) in a subsystem."""

    path: tuple[str, ...]  # subsystem path
    block: str
    port: int
    element: str  # flattened element suffix ("" for scalars), bus member path included
    dtype: DataType  # scalar type
    state: bool = False

    def __str__(self) -> str:
        kind = "state" if self.state else "sig"
        return f"{kind}({'/'.join((*self.path, self.block))}/{self.port}{self.element})"


class PropertyError(ModelError):
    pass


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks: list[tuple[str, str]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _PTOKEN.match(text, pos)
            if not m:
                raise PropertyError(f"unexpected input at {text[pos:]!r}")
            kind = m.lastgroup
            val = m.group(kind)
            if kind == "kw":
                depth, start = 1, m.end()
                end = start
                while end < len(text) and depth:
                    depth += {"(": 1, ")": -1}.get(text[end], 0)
                    end += 1
                if depth:
                    raise PropertyError(f"unterminated {val}(")
                self.toks.append((val, text[start:end - 1].strip()))
                pos = end
                continue
            self.toks.append((kind, val))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ("eof", "")

    def take(self, val=None):
        tok = self.peek()
        if val is not None and tok[1] != val:
            raise PropertyError(f"expected {val!r}, found {tok[1] or 'end of input'!r}")
        self.i += 1
        return tok

    def parse(self):
        e = self.or_()
        if self.peek()[0] != "eof":
            raise PropertyError(f"trailing input at {self.peek()[1]!r}")
        return e

    def or_(self):
        e = self.and_()
        while self.peek() == ("op", "||"):
            self.take()
            e = ("or", e, self.and_())
        return e

    def and_(self):
        e = self.cmp()
        while self.peek() == ("op", "&&"):
            self.take()
            e = ("and", e, self.cmp())
        return e

    def cmp(self):
        e = self.sum()
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("<", "<=", ">", ">=", "==", "!="):
            self.take()
            e = ("cmp", tok[1], e, self.sum())
        return e

    def sum(self):
        e = self.prod()
        while self.peek()[0] == "op" and self.peek()[1] in "+-" and self.peek()[1]:
            op = self.take()[1]
            e = ("add" if op == "+" else "sub", e, self.prod())
        return e

    def prod(self):
        e = self.atom()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            e = ("mul" if op == "*" else "div", e, self.atom())
        return e

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return ("num", Fraction(val))
        if kind == "word":
            return ("bool", val == "true")
        if kind in ("sig", "state"):
            return (kind, val)
        if (kind, val) == ("op", "-"):
            nk, nv = self.peek()
            if nk == "num":
                self.take()
                return ("num", -Fraction(nv))
            raise PropertyError("unary minus applies to numeric literals only")
        if (kind, val) == ("op", "!"):
            return ("not", self.atom())
        if (kind, val) == ("op", "("):
            e = self.or_()
            self.take(")")
            return e
        raise PropertyError(f"unexpected {val or 'end of input'!r}")


_REF = re.compile(r"^(?P<block>[^/\[\].]+)(?:/(?P<port>\d+))?(?P<member>(?:\.[A-Za-z_]\w*)*)(?P<idx>\[\s*\d+\s*(?:,\s*\d+\s*)?\])?$")


def parse_expression(text: str):
    return _Parser(text).parse()


def _resolve_ref(kind: str, text: str, tm: TypedModel, scope: tuple[str, ...]) -> SignalRef:
    m = _REF.match(text.strip())
    if not m:
        raise PropertyError(f"cannot parse reference {text!r}")
    sub = tm.model.subsystem(scope)
    bid = m.group("block").strip()
    try:
        b = sub.block(bid)
    except KeyError:
        raise PropertyError(f"no block {bid!r} in scope {'/'.join(scope) or '<root>'}") from None
    port = int(m.group("port") or 1)
    if kind == "state":
        if canonical_type(b.type) not in ("UnitDelay", "Delay"):
            raise PropertyError(f"state({bid}) needs a UnitDelay or Delay block")
    if canonical_type(b.type) == "Outport":
        # an Outport names the signal it exports
        if port != 1:
            raise PropertyError(f"Outport {bid!r} has a single signal")
        t = tm.in_type(sub, bid, 1)
    elif not 1 <= port <= output_count(b):
        raise PropertyError(f"block {bid!r} has no output {port}")
    else:
        t = tm.out_type(scope, bid, port)
    element = ""
    if m.group("member"):
        if not t.is_bus:
            raise PropertyError(f"{text!r}: member access on non-bus signal")
        member_path = m.group("member")[1:].replace(".", "_")
        leaves = dict(dtype_flatten(t, tm.bus_types))
        matches = [k for k in leaves if k == member_path or k.startswith(member_path + "_")]
        if not matches:
            raise PropertyError(f"{text!r}: unknown bus member")
        t = DataType(leaves[matches[0]].base, () if len(matches) == 1 else _dims_of(matches, member_path))
        element = "." + member_path
    if m.group("idx"):
        idx = [int(x) for x in m.group("idx")[1:-1].split(",")]
        if len(idx) != len(t.dims) or any(not 1 <= i <= d for i, d in zip(idx, t.dims)):
            raise PropertyError(f"{text!r}: index out of range for {t}")
        element += "_" + "_".join(map(str, idx))
        t = t.scalar
    elif t.is_bus or not t.is_scalar:
        raise PropertyError(f"{text!r} is {t}; properties need a scalar element (use [i] or .member)")
    return SignalRef(scope, bid, port, element, t, state=kind == "state")


def _dims_of(leaves: list[str], prefix: str) -> tuple[int, ...]:
    parts = [tuple(int(x) for x in k[len(prefix) + 1:].split("_")) for k in leaves]
    return tuple(max(p[i] for p in parts) for i in range(len(parts[0])))


def _typecheck(e, tm, scope):
    """Resolve references; return (resolved tree, 'bool'|'num')."""
    tag = e[0]
    if tag == "num":
        return e, "num"
    if tag == "bool":
        return e, "bool"
    if tag in ("sig", "state"):
        ref = _resolve_ref(tag, e[1], tm, scope)
        return ("ref", ref), "bool" if ref.dtype.is_bool else "num"
    if tag == "not":
        a, ta = _typecheck(e[1], tm, scope)
        if ta != "bool":
            raise PropertyError("'!' needs a Boolean operand")
        return ("not", a), "bool"
    if tag in ("and", "or"):
        a, ta = _typecheck(e[1], tm, scope)
        b, tb = _typecheck(e[2], tm, scope)
        if ta != "bool" or tb != "bool":
            raise PropertyError(f"'{tag}' needs Boolean operands")
        return (tag, a, b), "bool"
    if tag == "cmp":
        a, ta = _typecheck(e[2], tm, scope)
        b, tb = _typecheck(e[3], tm, scope)
        if ta != tb:
            raise PropertyError(f"cannot compare {ta} with {tb}")
        if ta == "bool" and e[1] not in ("==", "!="):
            raise PropertyError(f"'{e[1]}' is not defined on Booleans")
        return ("cmp", e[1], a, b), "bool"
    if tag in ("add", "sub", "mul", "div"):
        a, ta = _typecheck(e[1], tm, scope)
        b, tb = _typecheck(e[2], tm, scope)
        if ta != "num" or tb != "num":
            raise PropertyError("arithmetic needs numeric operands")
        return (tag, a, b), "num"
    raise PropertyError(f"bad expression node {tag}")


def make_property(pid: str, scope, text: str, tm: TypedModel) -> Property:
    if isinstance(scope, str):
        scope = tuple(x for x in scope.split("/") if x)
    scope = tuple(scope)
    try:
        tm.model.subsystem(scope)
    except KeyError:
        raise PropertyError(f"scope {'/'.join(scope)!r} does not name a subsystem") from None
    tree = parse_expression(text)
    resolved, kind = _typecheck(tree, tm, scope)
    if kind != "bool":
        raise PropertyError(f"property {pid!r} is not a Boolean expression")
    return Property(pid, scope, text, resolved)


def load_property(src, tm: TypedModel) -> Property:
    """Parse ``{id, scope, expr}`` JSON and resolve it against ``tm``."""
    if isinstance(src, (bytes, bytearray)):
        src = src.decode("utf-8")
    if isinstance(src, str):
        try:
            src = json.loads(src)
        except json.JSONDecodeError as exc:
            raise PropertyError(f"malformed JSON: {exc}") from None
    try:
        return make_property(str(src["id"]), src.get("scope", ""), str(src["expr"]), tm)
    except KeyError as exc:
        raise PropertyError(f"property is missing {exc}") from None


def load_properties(src, tm: TypedModel) -> list[Property]:
    """Load one property object or a list of them."""
    if isinstance(src, (bytes, bytearray)):
        src = src.decode("utf-8")
    if isinstance(src, str):
        src = json.loads(src)
    items = src if isinstance(src, list) else src.get("properties", [src]) if isinstance(src, dict) else []
    return [load_property(p, tm) for p in items]


def refs_of(expr) -> list[SignalRef]:
    if expr is None:
        return []
    if expr[0] == "ref":
        return [expr[1]]
    out = []
    for x in expr[1:]:
        if isinstance(x, tuple):
            out.extend(refs_of(x))
    return out
