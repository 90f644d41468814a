"""Intermediate representation: block table, subsystem table, slicing, rate split.

Every signal is flattened to scalar variables with globally unique names
(subsystem path + block id, then ``.port`` for multi-output blocks and
``_i``/``_r_c`` element suffixes).  Each subsystem becomes a
:class:`SubsystemIR` holding its inputs, outputs, state variables and an
ordered equation list; the simulator interprets it and the encoder prints
it, so both agree on one semantics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any

from .core import BOOLEAN, INTEGER, REAL, DataType, ModelError, Property, dtype_flatten, element_suffixes, parse_number
from .frontend import (
    SignalRef,
    TypedModel,
    canonical_type,
    control_port,
    driver,
    input_count,
    output_count,
    port_blocks,
    refs_of,
)

IR_SCHEMA = "blockcheck-ir/1"


class AlgebraicLoopError(ModelError):
    pass


# ---------------------------------------------------------------------------
# expressions


@dataclass(frozen=True)
class Node:
    """Scalar expression.

    ``op`` is one of: var, state, const, add, sub, mul, div, neg, abs, min,
    max, lt, le, gt, ge, eq, ne, cmpc, ite, and, or, xor, not, cast,
    saturate, member, lift.  ``attr`` carries the variable name (var/state),
    the literal (const), ``"sat"``/``"wrap"`` for integer arithmetic,
    ``(op, rational)`` for cmpc, ``(rounding, saturate)`` for cast and the
    leaf path for member.
    """

    op: str
    args: tuple = ()
    type: DataType = BOOLEAN
    attr: Any = None

    def __str__(self) -> str:
        if self.op == "var":
            return self.attr
        if self.op == "state":
            return f"{self.attr}@0"
        if self.op == "const":
            return f"{self.attr}:{self.type}"
        inner = " ".join(str(a) for a in self.args)
        extra = "" if self.attr is None else f"[{self.attr}]"
        return f"({self.op}{extra} {inner})"


def var(name: str, t: DataType) -> Node:
    return Node("var", (), t, name)


def state(name: str, t: DataType) -> Node:
    return Node("state", (), t, name)


def const(value, t: DataType) -> Node:
    return Node("const", (), t.scalar, value)


def cast(n: Node, t: DataType, rounding: str = "floor", saturate: bool = False) -> Node:
    if n.type == t:
        return n
    if n.type.is_bus or t.is_bus:
        raise ModelError(f"cannot convert {n.type} to {t}")
    return Node("cast", (n,), t, (rounding, bool(saturate)))


def arith(op: str, t: DataType, *args: Node, saturate: bool = False) -> Node:
    attr = ("sat" if saturate else "wrap") if t.is_int else None
    return Node(op, tuple(args), t, attr)


def cmpc(n: Node, op: str, value) -> Node:
    """Exact comparison of a scalar signal with a rational constant."""
    return Node("cmpc", (n,), BOOLEAN, (op, Fraction(value)))


def truthy(n: Node) -> Node:
    return n if n.type.is_bool else cmpc(n, "!=", 0)


def walk_nodes(n: Node):
    yield n
    for a in n.args:
        yield from walk_nodes(a)


def names_read(n: Node) -> set[str]:
    return {x.attr for x in walk_nodes(n) if x.op in ("var", "state")}


def substitute(n: Node, sub: dict) -> Node:
    """Replace var/state leaves; ``sub`` maps (op, name) -> Node."""
    if n.op in ("var", "state"):
        return sub.get((n.op, n.attr), n)
    if not n.args:
        return n
    args = tuple(substitute(a, sub) for a in n.args)
    return n if args == n.args else replace(n, args=args)


# ---------------------------------------------------------------------------
# IR records


@dataclass
class Var:
    name: str
    type: DataType
    role: str  # input | output | local | aux | control
    block: str = ""  # global path of the block the variable belongs to


@dataclass
class StateVar:
    name: str
    type: DataType
    init: Node


@dataclass
class Eq:
    kind: str  # def | out | next | port | bus | call
    target: str = ""
    expr: Node | None = None
    child: "SubsystemIR | None" = None
    args: tuple = ()  # bus: member nodes in leaf order
    leaves: tuple = ()  # bus: leaf paths matching ``args``

    def reads(self) -> set[str]:
        if self.kind == "call":
            c = self.child
            return {v.name for v in c.inputs} | ({c.control.name} if c.control else set())
        if self.kind == "bus":
            out = set()
            for a in self.args:
                out |= names_read(a)
            return out
        return names_read(self.expr)

    def defines(self) -> set[str]:
        if self.kind == "call":
            return {v.name for v in self.child.outputs}
        if self.kind == "next":
            return set()
        return {self.target}


@dataclass
class Activation:
    kind: str  # enabled | triggered | rate
    reset: bool = False  # enabled: re-apply initial states when re-enabled
    edge: str = "rising"  # triggered: rising | falling | either
    n: int = 1  # rate: activation period in parent steps


@dataclass
class BlockIR:
    """Equations, states and auxiliaries contributed by one block."""

    path: tuple[str, ...]
    type: str
    rate: int
    eqs: list[Eq] = field(default_factory=list)
    states: list[StateVar] = field(default_factory=list)
    aux: list[Var] = field(default_factory=list)
    child: "SubsystemIR | None" = None
    stub: bool = False


@dataclass
class SubsystemIR:
    path: tuple[str, ...]  # IR path; synthetic rate children add a "$rateN" segment
    prefix: str  # stripped from global names to get names local to this element
    rate: int
    inputs: list[Var] = field(default_factory=list)
    outputs: list[Var] = field(default_factory=list)
    blocks: list[BlockIR] = field(default_factory=list)
    activation: Activation | None = None
    control: Var | None = None
    wrapper_states: list[StateVar] = field(default_factory=list)
    equations: list[Eq] = field(default_factory=list)
    objective: Node | None = None
    signals: dict = field(default_factory=dict)  # (block id, port) -> {suffix: Node}
    model_path: tuple[str, ...] = ()  # subsystem of the model this element came from
    dummy: bool = False

    @property
    def name(self) -> str:
        return "/".join(self.path)

    @property
    def children(self) -> list["SubsystemIR"]:
        return [b.child for b in self.blocks if b.child is not None]

    @property
    def own_states(self) -> list[StateVar]:
        return [s for b in self.blocks for s in b.states]

    @property
    def body_states(self) -> list[StateVar]:
        out = list(self.own_states)
        for c in self.children:
            out.extend(c.all_states)
        return out

    @property
    def all_states(self) -> list[StateVar]:
        return self.body_states + list(self.wrapper_states)

    @property
    def own_aux(self) -> list[Var]:
        out = [v for b in self.blocks for v in b.aux]
        for c in self.children:
            out.extend(c.inputs)
            if c.control is not None:
                out.append(c.control)
            out.extend(c.outputs)
        return out

    @property
    def all_aux(self) -> list[Var]:
        out = self.own_aux
        for c in self.children:
            out.extend(c.all_aux)
        return out

    @property
    def locals(self) -> list[Var]:
        return [Var(e.target, e.expr.type, "local") for e in self.equations if e.kind == "def"]

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def find(self, path) -> "SubsystemIR":
        for e in self.walk():
            if e.path == tuple(path):
                return e
        raise KeyError("/".join(path))

    def contains(self, path) -> bool:
        return any(e.path == tuple(path) for e in self.walk())

    def rel(self, name: str) -> str:
        return name[len(self.prefix):] if self.prefix and name.startswith(self.prefix) else name

    def types(self) -> dict[str, DataType]:
        out = {}
        for v in self.inputs + self.outputs + self.all_aux:
            out[v.name] = v.type
        if self.control is not None:
            out[self.control.name] = self.control.type
        for s in self.all_states:
            out[s.name] = s.type
        for e in self.walk():
            for v in e.locals:
                out[v.name] = v.type
        return out


# ---------------------------------------------------------------------------
# block table


@dataclass
class BlockRecord:
    index: int
    path: tuple[str, ...]
    type: str
    params: dict
    in_types: list
    out_types: list
    rate: int
    stub: bool
    parent: int | None  # index of the enclosing SubSystem block
    preds: dict = field(default_factory=dict)  # in port -> (index, out port)
    succs: dict = field(default_factory=dict)  # out port -> [(index, in port)]

    @property
    def name(self) -> str:
        return "/".join(self.path)


@dataclass
class BlockTable:
    records: list[BlockRecord]

    def __post_init__(self):
        self._by_path = {r.path: r for r in self.records}

    def __len__(self):
        return len(self.records)

    def __getitem__(self, path) -> BlockRecord:
        if isinstance(path, int):
            return self.records[path]
        return self._by_path[tuple(path)]

    def children(self, r: BlockRecord) -> list[BlockRecord]:
        return [x for x in self.records if x.parent == r.index]


def build_block_table(tm: TypedModel) -> BlockTable:
    records: list[BlockRecord] = []
    where: dict = {}

    def visit(sub, parent_idx, rate):
        for b in sub.blocks:
            path = (*sub.path, b.id)
            r = b.rate or rate
            ins = []
            for p in range(1, input_count(b) + 1):
                try:
                    ins.append(tm.in_type(sub, b.id, p))
                except KeyError:
                    ins.append(None)
            outs = [tm.out_type(sub.path, b.id, p) for p in range(1, output_count(b) + 1)]
            rec = BlockRecord(len(records), path, b.type, dict(b.params), ins, outs, r, b.stub, parent_idx)
            records.append(rec)
            where[path] = rec
            if b.system is not None:
                visit(b.system, rec.index, r)

    visit(tm.model.system, None, 1)
    for sub in tm.model.walk():
        for ln in sub.lines:
            src = where[(*sub.path, ln.src[0])]
            for dbid, dport in ln.dsts:
                dst = where[(*sub.path, dbid)]
                dst.preds[dport] = (src.index, ln.src[1])
                src.succs.setdefault(ln.src[1], []).append((dst.index, dport))
    return BlockTable(records)


def _ref_blocks(prop: Property) -> list[tuple[tuple[str, ...], int]]:
    return [((*r.path, r.block), r.port) for r in refs_of(prop.expr)]


def slice_blocks(bt: BlockTable, tm: TypedModel, prop: Property | None) -> frozenset:
    """Paths of all blocks backward-reachable from the property's signals."""
    if prop is None:
        return frozenset(r.path for r in bt.records)
    keep: set = set()
    work: list = []

    def need(path, port=None):
        rec = bt[path]
        if rec.type == "SubSystem" and port is not None:
            sub = tm.model.subsystem(path)
            ob = port_blocks(sub, "Outport")[port - 1]
            need((*path, ob.id))
        if path not in keep:
            keep.add(path)
            work.append(path)

    for path, port in _ref_blocks(prop):
        need(path, port)
    while work:
        path = work.pop()
        rec = bt[path]
        if rec.parent is not None:
            parent = bt[rec.parent]
            if parent.path not in keep:
                keep.add(parent.path)
                work.append(parent.path)
        t = canonical_type(rec.type)
        if t == "SubSystem":
            ctl = rec.preds.get("enable") or rec.preds.get("trigger")
            if ctl is not None:
                src = bt[ctl[0]]
                need(src.path, ctl[1])
                sub = tm.model.subsystem(path)
                kind, pb = control_port(sub)
                keep.add((*path, pb.id))
            continue
        if t == "Inport" and rec.parent is not None:
            parent = bt[rec.parent]
            sub = tm.model.subsystem(parent.path)
            k = [b.id for b in port_blocks(sub, "Inport")].index(path[-1]) + 1
            src = parent.preds.get(k)
            if src is not None:
                need(bt[src[0]].path, src[1])
            continue
        for p, (si, sp) in rec.preds.items():
            if isinstance(p, int):
                need(bt[si].path, sp)
    return frozenset(keep)


# ---------------------------------------------------------------------------
# lowering


def var_names(path: tuple[str, ...], bid: str, port: int, nports: int, t: DataType, bus_table) -> list[tuple[str, DataType]]:
    base = "/".join((*path, bid))
    if nports > 1:
        base += f".{port}"
    if t.is_bus:
        return [(base, t)]
    return [(base + sfx, t.scalar) for sfx in element_suffixes(t.dims)]


def _param_elements(v, size: int) -> list:
    if isinstance(v, list):
        flat = [x for r in v for x in r] if v and isinstance(v[0], list) else list(v)
        if len(flat) == 1:
            return flat * size
        if len(flat) != size:
            raise ModelError(f"parameter has {len(flat)} elements, signal has {size}")
        return flat
    return [v] * size


def _bcast(nodes: list[Node], size: int) -> list[Node]:
    if len(nodes) == size:
        return nodes
    if len(nodes) == 1:
        return nodes * size
    raise ModelError(f"cannot broadcast {len(nodes)} elements to {size}")


def _num(x) -> Fraction | bool | int:
    v = parse_number(x)
    return v if isinstance(v, bool) else Fraction(v)


_CMP_OPS = {"<": "lt", "<=": "le", ">": "gt", ">=": "ge", "==": "eq", "~=": "ne", "!=": "ne"}


def _reduce(op, t, nodes, sat):
    acc = nodes[0]
    for n in nodes[1:]:
        acc = _binop(op, t, acc, n, sat)
    return acc


def _binop(op, t, a, b, sat):
    if op in ("min", "max"):
        return Node(op, (a, b), t)
    return arith(op, t, a, b, saturate=sat)


class _Lowering:
    def __init__(self, tm: TypedModel, keep: frozenset):
        self.tm = tm
        self.keep = keep
        self.buses = tm.bus_types

    def kept(self, sub, b) -> bool:
        return (*sub.path, b.id) in self.keep

    def element(self, sub, rate: int) -> SubsystemIR:
        prefix = "/".join(sub.path) + "/" if sub.path else ""
        e = SubsystemIR(sub.path, prefix, rate, model_path=sub.path)
        sig: dict = {}
        blocks = [b for b in sub.blocks if self.kept(sub, b)]
        pre: dict = {}
        # pass 1: decide the node for every block output
        for b in blocks:
            t = canonical_type(b.type)
            brate = b.rate or rate
            bir = BlockIR((*sub.path, b.id), b.type, brate, stub=b.stub)
            pre[b.id] = bir
            nports = output_count(b)
            for p in range(1, nports + 1):
                ot = self.tm.out_type(sub.path, b.id, p)
                names = var_names(sub.path, b.id, p, nports, ot, self.buses)
                sfx = [""] if ot.is_bus else element_suffixes(ot.dims)
                if t == "Inport":
                    vs = [Var(n, ty, "input", "/".join(bir.path)) for n, ty in names]
                    e.inputs.extend(vs)
                    nodes = [var(v.name, v.type) for v in vs]
                elif b.stub or t == "BusCreator":
                    vs = [Var(n, ty, "aux", "/".join(bir.path)) for n, ty in names]
                    bir.aux.extend(vs)
                    nodes = [var(v.name, v.type) for v in vs]
                elif t in ("UnitDelay", "Delay"):
                    nodes = self._delay_states(b, bir, names, ot)
                elif t == "Constant" or t == "Ground":
                    vals = _param_elements(b.params.get("value", 0), ot.size) if t == "Constant" else [0] * ot.size
                    nodes = [const(_num(v) if not isinstance(v, bool) else v, ot) for v in vals]
                elif t == "SubSystem":
                    nodes = None  # filled once the child is lowered
                else:
                    nodes = [var(n, ty) for n, ty in names]
                sig[(b.id, p)] = dict(zip(sfx, nodes)) if nodes is not None else None
        # children first so their port variables exist
        for b in blocks:
            if b.type == "SubSystem":
                child = self.element(b.system, b.rate or rate)
                pre[b.id].child = child
                self._activation(b, child)
                outs = port_blocks(b.system, "Outport")
                for p, ob in enumerate(outs, 1):
                    ot = self.tm.out_type(sub.path, b.id, p)
                    sfx = [""] if ot.is_bus else element_suffixes(ot.dims)
                    vs = [v for v in child.outputs if v.block == "/".join((*b.system.path, ob.id))]
                    if vs:
                        sig[(b.id, p)] = dict(zip(sfx, [var(v.name, v.type) for v in vs]))
        e.signals = sig
        # pass 2: equations
        for b in blocks:
            bir = pre[b.id]
            self._equations(sub, b, bir, sig, e)
            e.blocks.append(bir)
        return e

    # -- helpers -----------------------------------------------------------

    def ins(self, sub, b, port, sig) -> list[Node]:
        src = driver(sub, b.id, port)
        m = sig.get(src)
        if m is None:
            raise ModelError(f"{'/'.join((*sub.path, b.id))}: input {port} is driven by a sliced-away block")
        return list(m.values())

    def in_type(self, sub, b, port) -> DataType:
        return self.tm.in_type(sub, b.id, port)

    def _delay_states(self, b, bir, names, ot) -> list[Node]:
        if ot.is_bus:
            raise ModelError(f"{'/'.join(bir.path)}: bus-typed delays are not supported")
        n = int(b.params.get("length", 1)) if canonical_type(b.type) == "Delay" else 1
        if n < 1:
            raise ModelError(f"{'/'.join(bir.path)}: delay length must be >= 1")
        inits = _param_elements(b.params.get("initial", 0), ot.size)
        regs = []
        for k in range(1, n + 1):
            row = []
            for (name, ty), iv in zip(names, inits):
                sname = name if n == 1 else f"{name}.d{k}"
                sv = StateVar(sname, ty, const(_num(iv), ty))
                bir.states.append(sv)
                row.append(sv)
            regs.append(row)
        bir._regs = regs  # type: ignore[attr-defined]
        return [state(sv.name, sv.type) for sv in regs[-1]]

    def _activation(self, b, child: SubsystemIR):
        ctl = control_port(b.system)
        if ctl is None:
            return
        kind, pb = ctl
        path = b.system.path
        src_t = self.tm.in_type(self.tm.model.subsystem(path[:-1]), b.id, kind)
        if not src_t.is_scalar:
            raise ModelError(f"{'/'.join(path)}: {kind} signal must be scalar")
        child.control = Var("/".join((*path, "$ctl")), src_t, "control", "/".join(path))
        if kind == "enable":
            states = str(pb.params.get("states", "held")).lower()
            if states not in ("held", "reset"):
                raise ModelError(f"{'/'.join(path)}: EnablePort states must be held or reset")
            child.activation = Activation("enabled", reset=states == "reset")
        else:
            edge = str(pb.params.get("edge", "rising")).lower()
            if edge not in ("rising", "falling", "either"):
                raise ModelError(f"{'/'.join(path)}: unknown trigger edge {edge!r}")
            child.activation = Activation("triggered", edge=edge)
        add_wrapper_states(child, self.tm, b.system)

    def _equations(self, sub, b, bir: BlockIR, sig, e: SubsystemIR):
        t = canonical_type(b.type)
        loc = "/".join((*sub.path, b.id))
        p = b.params
        sat = bool(p.get("saturate_on_overflow", False))
        rounding = str(p.get("rounding", "floor"))

        def out_nodes(port=1):
            return list(sig[(b.id, port)].values())

        def define(port, exprs):
            targets = out_nodes(port)
            for tg, ex in zip(targets, _bcast(exprs, len(targets))):
                bir.eqs.append(Eq("def", tg.attr, cast(ex, tg.type, rounding, sat)))

        if b.stub or t in ("Inport", "Constant", "Ground", "Terminator", "EnablePort", "TriggerPort"):
            return
        if t == "Outport":
            src = self.ins(sub, b, 1, sig)
            it = self.in_type(sub, b, 1)
            names = var_names(sub.path, b.id, 1, 1, it, self.buses)
            for (n, ty), s in zip(names, src):
                e.outputs.append(Var(n, ty, "output", loc))
                bir.eqs.append(Eq("out", n, s))
            return
        if t == "SubSystem":
            child = bir.child
            ports = port_blocks(b.system, "Inport")
            for k, ib in enumerate(ports, 1):
                vs = [v for v in child.inputs if v.block == "/".join((*b.system.path, ib.id))]
                if not vs:
                    continue
                src = self.ins(sub, b, k, sig)
                for v, s in zip(vs, _bcast(src, len(vs))):
                    bir.eqs.append(Eq("port", v.name, cast(s, v.type)))
            if child.control is not None:
                kind = child.activation.kind
                src = self.ins(sub, b, "enable" if kind == "enabled" else "trigger", sig)
                bir.eqs.append(Eq("port", child.control.name, src[0]))
            bir.eqs.append(Eq("call", child=child))
            return
        ot = self.tm.out_type(sub.path, b.id, 1) if output_count(b) else None
        ost = ot.scalar if ot is not None and not ot.is_bus else ot
        if t in ("UnitDelay", "Delay"):
            src = [cast(x, ost, rounding, sat) for x in self.ins(sub, b, 1, sig)]
            regs = bir._regs  # type: ignore[attr-defined]
            for sv, s in zip(regs[0], _bcast(src, len(regs[0]))):
                bir.eqs.append(Eq("next", sv.name, s))
            for k in range(1, len(regs)):
                for sv, prev in zip(regs[k], regs[k - 1]):
                    bir.eqs.append(Eq("next", sv.name, state(prev.name, prev.type)))
            return
        if t in ("Add", "Sub", "Product"):
            signs = (p.get("signs", "+-" if b.type == "Sub" else "++")) if t != "Product" else p.get("ops", "**")
            plus, minus = ("+", "-") if t != "Product" else ("*", "/")
            op, inv = ("add", "sub") if t != "Product" else ("mul", "div")
            ins = [[cast(x, ost, rounding, sat) for x in self.ins(sub, b, k, sig)] for k in range(1, len(signs) + 1)]
            if len(ins) == 1:
                total = _reduce(op, ost, ins[0], sat)
                if signs[0] == minus:
                    total = arith("neg", ost, total, saturate=sat) if t != "Product" else \
                        arith("div", ost, const(1, ost), total, saturate=sat)
                define(1, [total])
                return
            size = ot.size
            res = []
            for k in range(size):
                acc = None
                for s, xs in zip(signs, ins):
                    x = _bcast(xs, size)[k]
                    if acc is None:
                        if s == minus:
                            unit = const(0 if t != "Product" else 1, ost)
                            acc = arith("neg", ost, x, saturate=sat) if t != "Product" else arith("div", ost, unit, x, saturate=sat)
                        else:
                            acc = x
                    else:
                        acc = arith(op if s == plus else inv, ost, acc, x, saturate=sat)
                res.append(acc)
            define(1, res)
            return
        if t == "Gain":
            xs = [cast(x, ost, rounding, sat) for x in self.ins(sub, b, 1, sig)]
            gains = _param_elements(p.get("gain", 1), ot.size)
            xs = _bcast(xs, ot.size)
            define(1, [arith("mul", ost, const(_num(g), ost), x, saturate=sat) for g, x in zip(gains, xs)])
            return
        if t == "Saturate":
            xs = [cast(x, ost, rounding, sat) for x in self.ins(sub, b, 1, sig)]
            hi, lo = _num(p.get("upper", 1)), _num(p.get("lower", -1))
            if hi < lo:
                raise ModelError(f"{loc}: saturation upper limit below lower limit")
            define(1, [Node("saturate", (const(hi, ost), const(lo, ost), x), ost) for x in xs])
            return
        if t == "MinMax":
            fn = str(p.get("fn", "min")).lower()
            if fn not in ("min", "max"):
                raise ModelError(f"{loc}: MinMax fn must be min or max")
            ins = [[cast(x, ost, rounding, sat) for x in self.ins(sub, b, k, sig)] for k in range(1, input_count(b) + 1)]
            if len(ins) == 1:
                define(1, [_reduce(fn, ost, ins[0], sat)])
            else:
                define(1, [_reduce(fn, ost, [_bcast(xs, ot.size)[k] for xs in ins], sat) for k in range(ot.size)])
            return
        if t in ("Abs", "UnaryMinus"):
            xs = [cast(x, ost, rounding, sat) for x in self.ins(sub, b, 1, sig)]
            op = "abs" if t == "Abs" else "neg"
            if ost.is_bool:
                raise ModelError(f"{loc}: {t} needs a numeric input")
            define(1, [arith(op, ost, x, saturate=sat) for x in xs])
            return
        if t == "Switch":
            ctl = self.ins(sub, b, 2, sig)
            if len(ctl) != 1:
                raise ModelError(f"{loc}: switch control must be scalar")
            crit = str(p.get("criteria", "u2 >= Threshold")).replace(" ", "")
            th = _num(p.get("threshold", 0))
            c = ctl[0]
            if crit == "u2>=Threshold":
                cond = cmpc(c, ">=", th)
            elif crit == "u2>Threshold":
                cond = cmpc(c, ">", th)
            elif crit == "u2~=0":
                cond = cmpc(c, "!=", 0)
            else:
                raise ModelError(f"{loc}: unknown switch criteria {p.get('criteria')!r}")
            a = _bcast([cast(x, ost, rounding, sat) for x in self.ins(sub, b, 1, sig)], ot.size)
            z = _bcast([cast(x, ost, rounding, sat) for x in self.ins(sub, b, 3, sig)], ot.size)
            define(1, [Node("ite", (cond, x, y), ost) for x, y in zip(a, z)])
            return
        if t == "RelationalOperator":
            op = str(p.get("op", "<="))
            if op not in _CMP_OPS:
                raise ModelError(f"{loc}: unknown relational operator {op!r}")
            a = self.ins(sub, b, 1, sig)
            z = self.ins(sub, b, 2, sig)
            define(1, [Node(_CMP_OPS[op], (x, y), BOOLEAN) for x, y in zip(_bcast(a, ot.size), _bcast(z, ot.size))])
            return
        if t in ("CompareToConstant", "CompareToZero"):
            op = str(p.get("op", "<="))
            if op not in _CMP_OPS:
                raise ModelError(f"{loc}: unknown relational operator {op!r}")
            op = "!=" if op == "~=" else op
            k = _num(p.get("const", 0)) if t == "CompareToConstant" else Fraction(0)
            define(1, [cmpc(x, op, k) for x in self.ins(sub, b, 1, sig)])
            return
        if t == "Logic":
            op = str(p.get("op", "AND")).upper()
            ins = [[truthy(x) for x in self.ins(sub, b, k, sig)] for k in range(1, input_count(b) + 1)]
            if op == "NOT":
                define(1, [Node("not", (x,), BOOLEAN) for x in ins[0]])
                return
            base = {"AND": "and", "OR": "or", "NAND": "and", "NOR": "or", "XOR": "xor", "NXOR": "xor"}.get(op)
            if base is None:
                raise ModelError(f"{loc}: unknown logic operator {op!r}")
            rows = [ins[0]] if len(ins) == 1 else None
            if rows is not None:
                res = [Node(base, tuple(ins[0]), BOOLEAN)] if len(ins[0]) > 1 else ins[0]
            else:
                res = [Node(base, tuple(_bcast(xs, ot.size)[k] for xs in ins), BOOLEAN) for k in range(ot.size)]
            if op in ("NAND", "NOR", "NXOR"):
                res = [Node("not", (x,), BOOLEAN) for x in res]
            define(1, res)
            return
        if t == "DataTypeConversion":
            if rounding not in ("floor", "nearest", "zero", "ceil"):
                raise ModelError(f"{loc}: unknown rounding {rounding!r}")
            define(1, self.ins(sub, b, 1, sig))
            return
        if t == "RateTransition":
            define(1, self.ins(sub, b, 1, sig))
            return
        if t == "Mux":
            flat = []
            for k in range(1, input_count(b) + 1):
                flat.extend(cast(x, ost) for x in self.ins(sub, b, k, sig))
            define(1, flat)
            return
        if t == "Demux":
            xs = self.ins(sub, b, 1, sig)
            n = output_count(b)
            each = len(xs) // n
            for k in range(n):
                define(k + 1, xs[k * each:(k + 1) * each])
            return
        if t == "BusCreator":
            members = self.buses[ot.bus_name]
            nodes = []
            for k, (mname, mt) in enumerate(members, 1):
                xs = self.ins(sub, b, k, sig)
                nodes.extend(xs)
            target = out_nodes(1)[0]
            leaves = [lp for lp, _ in dtype_flatten(ot, self.buses)]
            if len(leaves) != len(nodes):
                # nested bus members arrive as one bus node; expand through accessors
                expanded = []
                for (mname, mt), k in zip(members, range(1, len(members) + 1)):
                    xs = self.ins(sub, b, k, sig)
                    if mt.is_bus:
                        for lp, lt in dtype_flatten(mt, self.buses):
                            expanded.append(Node("member", (xs[0],), lt, lp))
                    else:
                        expanded.extend(xs)
                nodes = expanded
            bir.eqs.append(Eq("bus", target.attr, None, args=tuple(nodes), leaves=tuple(leaves)))
            return
        if t == "BusSelector":
            bus = self.ins(sub, b, 1, sig)[0]
            for k, sname in enumerate(p.get("signals", []), 1):
                mt = self.tm.out_type(sub.path, b.id, k)
                if mt.is_bus:
                    raise ModelError(f"{loc}: selecting a nested bus is not supported")
                leaves = [(sname + sfx) for sfx in element_suffixes(mt.dims)]
                define(k, [Node("member", (bus,), mt.scalar, lp) for lp in leaves])
            return
        raise ModelError(f"{loc}: no lowering for block type {b.type}")


def add_wrapper_states(child: SubsystemIR, tm: TypedModel | None, sub=None):
    """Hold states for outputs plus the activation-specific state."""
    act = child.activation
    base = child.name
    inits = {}
    if sub is not None:
        for ob in port_blocks(sub, "Outport"):
            inits["/".join((*sub.path, ob.id))] = ob.params.get("initial", 0)
    ws = []
    for v in child.outputs:
        if v.type.is_bus:
            raise ModelError(f"{base}: bus outputs of conditionally executed subsystems are not supported")
        iv = inits.get(v.block, 0)
        if isinstance(iv, list):
            sfx = v.name[len(v.block):]
            sfxs = element_suffixes((len(iv),))
            iv = iv[sfxs.index(sfx)] if sfx in sfxs else iv[0]
        ws.append(StateVar(f"{base}/$hold.{child.rel(v.name)}", v.type, const(_num(iv) if not isinstance(iv, bool) else iv, v.type)))
    if act.kind == "enabled" and act.reset:
        ws.append(StateVar(f"{base}/$en", BOOLEAN, const(False, BOOLEAN)))
    if act.kind == "triggered":
        ws.append(StateVar(f"{base}/$trig", child.control.type, const(Fraction(0), child.control.type)))
    if act.kind == "rate":
        ws.append(StateVar(f"{base}/$cnt", INTEGER, const(0, INTEGER)))
    child.wrapper_states = ws


def hold_state(child: SubsystemIR, out: Var) -> str:
    return f"{child.name}/$hold.{child.rel(out.name)}"


# ---------------------------------------------------------------------------
# objective


def compile_expr(expr, e: SubsystemIR) -> Node:
    """Property tree -> Node over the element's variables."""
    tag = expr[0]
    if tag == "bool":
        return const(expr[1], BOOLEAN)
    if tag == "num":
        return const(expr[1], REAL)
    if tag == "ref":
        return _ref_node(expr[1], e)
    if tag == "not":
        return Node("not", (compile_expr(expr[1], e),), BOOLEAN)
    if tag in ("and", "or"):
        return Node(tag, (compile_expr(expr[1], e), compile_expr(expr[2], e)), BOOLEAN)
    if tag == "cmp":
        op, a, b = expr[1], expr[2], expr[3]
        if a[0] == "num" and b[0] == "num":
            return const(_fold(a[1], op, b[1]), BOOLEAN)
        if b[0] == "num" and a[0] != "num" and _plain(a):
            return cmpc(compile_expr(a, e), op, b[1])
        if a[0] == "num" and _plain(b):
            return cmpc(compile_expr(b, e), _FLIP[op], a[1])
        x, y = compile_expr(a, e), compile_expr(b, e)
        if x.type == y.type:
            return Node(_CMP_OPS[op], (x, y), BOOLEAN)
        return Node(_CMP_OPS[op], (lift(x), lift(y)), BOOLEAN)
    if tag in ("add", "sub", "mul", "div"):
        return Node(tag, (lift(compile_expr(expr[1], e)), lift(compile_expr(expr[2], e))), REAL)
    raise ModelError(f"bad property node {tag}")


def _plain(x) -> bool:
    return x[0] == "ref"


_FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "==", "!=": "!="}


def _fold(a, op, b) -> bool:
    return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b, "==": a == b, "!=": a != b}[op]


def lift(n: Node) -> Node:
    if n.type == REAL:
        return n
    if n.op == "const" and not n.type.is_bool:
        return const(Fraction(n.attr), REAL)
    if n.type.is_bus:
        raise ModelError("bus signal in property arithmetic")
    return Node("lift", (n,), REAL)


def _ref_node(ref: SignalRef, e: SubsystemIR) -> Node:
    m = e.signals.get((ref.block, ref.port))
    if m is None:
        # Outport references resolve to the output variable
        prefix = "/".join((*ref.path, ref.block))
        outs = {v.name[len(prefix):]: var(v.name, v.type) for v in e.outputs if v.block == prefix}
        if not outs:
            raise ModelError(f"{ref} does not resolve in {e.name or '<root>'}")
        m = outs
    el = ref.element
    if el.startswith("."):
        member = el[1:]
        bus = m[""]
        return Node("member", (bus,), ref.dtype, member)
    if el not in m:
        raise ModelError(f"{ref}: no element {el!r}")
    n = m[el]
    if ref.state and n.op != "state":
        raise ModelError(f"{ref} does not name a delay state")
    return n


# ---------------------------------------------------------------------------
# rate splitting


def split_rates(e: SubsystemIR) -> SubsystemIR:
    """Make every element single-rate (in place; returns ``e``)."""
    for c in e.children:
        split_rates(c)
    classes: dict[int, list[BlockIR]] = {}
    for b in e.blocks:
        if canonical_type(b.type) in ("Inport", "Outport", "EnablePort", "TriggerPort"):
            continue
        if b.rate != e.rate:
            if b.rate < e.rate or b.rate % e.rate:
                raise ModelError(
                    f"{'/'.join(b.path)}: rate {b.rate} is not an integer multiple of its container rate {e.rate}")
            classes.setdefault(b.rate, []).append(b)
    for r, members in sorted(classes.items()):
        n = r // e.rate
        if len(members) == 1 and members[0].child is not None and members[0].child.activation is None:
            child = members[0].child
            child.activation = Activation("rate", n=n)
            add_wrapper_states(child, None)
            continue
        _make_dummy(e, members, r, n)
    return e


def _make_dummy(e: SubsystemIR, members: list[BlockIR], r: int, n: int):
    dpath = (*e.path, f"$rate{r}")
    dname = "/".join(dpath)
    d = SubsystemIR(dpath, e.prefix, r, blocks=list(members), dummy=True, model_path=e.model_path)
    inside_defs: set = set()
    inside_reads: set = set()
    types: dict = {}
    for b in members:
        for eq in b.eqs:
            inside_defs |= eq.defines()
            if eq.kind == "call":
                inside_defs |= {v.name for v in eq.child.all_aux}
                for v in eq.child.outputs:
                    types[v.name] = v.type
            else:
                inside_reads |= eq.reads()
                for node in ([eq.expr] if eq.expr is not None else list(eq.args)):
                    for x in walk_nodes(node):
                        if x.op in ("var", "state"):
                            types[x.attr] = x.type
            if eq.kind in ("def", "port"):
                types[eq.target] = eq.expr.type
        inside_defs |= {s.name for s in b.states} | {v.name for v in b.aux}
        for s in b.states:
            types[s.name] = s.type
        for v in b.aux:
            types[v.name] = v.type
        if b.child is not None:
            inside_defs |= {s.name for s in b.child.all_states}
    rest = [b for b in e.blocks if b not in members]
    outside_reads: set = set()
    for b in rest:
        for eq in b.eqs:
            outside_reads |= eq.reads()
    if e.objective is not None:
        outside_reads |= names_read(e.objective)
    # states read inside but owned outside, and plain variables
    kinds = {}
    for b in members:
        for eq in b.eqs:
            nodes = [eq.expr] if eq.expr is not None else list(eq.args)
            for node in nodes:
                for x in walk_nodes(node):
                    if x.op in ("var", "state"):
                        kinds.setdefault(x.attr, x.op)
    for b in rest:
        for eq in b.eqs:
            nodes = [eq.expr] if eq.expr is not None else list(eq.args)
            for node in nodes:
                for x in walk_nodes(node):
                    if x.op in ("var", "state"):
                        kinds.setdefault(x.attr, x.op)
    if e.objective is not None:
        for x in walk_nodes(e.objective):
            if x.op in ("var", "state"):
                kinds.setdefault(x.attr, x.op)

    def port_name(x):
        return f"{dname}/{e.rel(x)}"

    in_sub, out_sub = {}, {}
    port_eqs = []
    for x in sorted(inside_reads - inside_defs):
        pv = Var(port_name(x), types[x], "input", dname)
        d.inputs.append(pv)
        in_sub[(kinds[x], x)] = var(pv.name, pv.type)
        port_eqs.append(Eq("port", pv.name, Node(kinds[x], (), types[x], x)))
    out_eqs = []
    for x in sorted(outside_reads & inside_defs):
        pv = Var(port_name(x), types[x], "output", dname)
        d.outputs.append(pv)
        out_sub[(kinds[x], x)] = var(pv.name, pv.type)
        out_eqs.append(Eq("out", pv.name, Node(kinds[x], (), types[x], x)))
    for b in members:
        b.eqs = [_subst_eq(eq, in_sub) for eq in b.eqs]
    d.blocks.append(BlockIR((*dpath, "$out"), "$ports", r, eqs=out_eqs))
    for b in rest:
        b.eqs = [_subst_eq(eq, out_sub) for eq in b.eqs]
    if e.objective is not None:
        e.objective = substitute(e.objective, out_sub)
    for key, m in list(e.signals.items()):
        if m:
            e.signals[key] = {k: substitute(v, out_sub) for k, v in m.items()}
    d.activation = Activation("rate", n=n)
    add_wrapper_states(d, None)
    holder = BlockIR(dpath, "$rate", e.rate, eqs=port_eqs + [Eq("call", child=d)], child=d)
    idx = min(e.blocks.index(b) for b in members)
    e.blocks = [b for b in e.blocks if b not in members]
    e.blocks.insert(idx, holder)


def _subst_eq(eq: Eq, sub: dict) -> Eq:
    if not sub:
        return eq
    if eq.kind == "call":
        return eq
    if eq.kind == "bus":
        return replace(eq, args=tuple(substitute(a, sub) for a in eq.args))
    return replace(eq, expr=substitute(eq.expr, sub))


# ---------------------------------------------------------------------------
# finishing: alias elimination and ordering


def _eliminate_aliases(e: SubsystemIR):
    sub = {}
    for b in e.blocks:
        keep = []
        for eq in b.eqs:
            if eq.kind == "def" and eq.expr.op in ("var", "state", "const"):
                sub[("var", eq.target)] = eq.expr
            else:
                keep.append(eq)
        b.eqs = keep
    if not sub:
        return
    # resolve chains
    def res(n):
        seen = 0
        while n.op == "var" and ("var", n.attr) in sub and seen < 1000:
            n = sub[("var", n.attr)]
            seen += 1
        return n

    sub = {k: res(v) for k, v in sub.items()}
    for b in e.blocks:
        b.eqs = [_subst_eq(eq, sub) for eq in b.eqs]
    if e.objective is not None:
        e.objective = substitute(e.objective, sub)
    for key, m in list(e.signals.items()):
        if m:
            e.signals[key] = {k: substitute(v, sub) for k, v in m.items()}


def order_equations(e: SubsystemIR):
    """Topologically sort the element's equations (calls are atomic)."""
    eqs = [eq for b in e.blocks for eq in b.eqs]
    owner_block = {}
    for b in e.blocks:
        for eq in b.eqs:
            owner_block[id(eq)] = b
    definer = {}
    for i, eq in enumerate(eqs):
        for x in eq.defines():
            if x in definer:
                raise ModelError(f"{x} is defined twice in {e.name or '<root>'}")
            definer[x] = i
    deps = [sorted({definer[x] for x in eq.reads() if x in definer}) for eq in eqs]
    done = [False] * len(eqs)
    order = []
    visiting = [False] * len(eqs)

    def visit(i, stack):
        if done[i]:
            return
        if visiting[i]:
            cyc = stack[stack.index(i):]
            names = sorted({"/".join(owner_block[id(eqs[j])].path) for j in cyc})
            raise AlgebraicLoopError("algebraic loop through " + ", ".join(names))
        visiting[i] = True
        stack.append(i)
        for j in deps[i]:
            visit(j, stack)
        stack.pop()
        visiting[i] = False
        done[i] = True
        order.append(eqs[i])

    for i in range(len(eqs)):
        visit(i, [])
    e.equations = order


def finalize(e: SubsystemIR):
    for c in e.children:
        finalize(c)
    _eliminate_aliases(e)
    order_equations(e)
    names = [v.name for v in e.inputs + e.outputs] + [s.name for s in e.all_states] + [v.name for v in e.all_aux]
    names += [eq.target for eq in e.equations if eq.kind == "def"]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ModelError(f"variable name clash in {e.name or '<root>'}: {sorted(dup)}")


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Program:
    """A lowered model ready for simulation and encoding."""

    tm: TypedModel
    bt: BlockTable
    root: SubsystemIR
    prop: Property | None
    owner: tuple[str, ...]  # IR path of the element holding the objective
    kept: frozenset
    sliced: bool

    @property
    def block_count(self) -> int:
        return len(self.kept)

    @property
    def stubs(self) -> list[str]:
        return sorted("/".join(p) for p in self.kept if self.bt[p].stub)

    def element(self, path) -> SubsystemIR:
        return self.root.find(path)

    def chain(self) -> list[SubsystemIR]:
        """Elements from the objective owner up to the root."""
        out = []
        path = tuple(self.owner)
        while True:
            out.append(self.root.find(path))
            if not path:
                return out
            path = path[:-1]
            while path and not self.root.contains(path):
                path = path[:-1]

    def wrapped_ancestors_of_owner(self) -> set[tuple]:
        return {e.path for e in self.chain() if e.activation is not None}


def build_tables(tm: TypedModel, prop: Property | None = None, keep: frozenset | None = None):
    """Block table plus the (unsplit) subsystem tree for the kept blocks."""
    bt = build_block_table(tm)
    if keep is None:
        keep = frozenset(r.path for r in bt.records)
    root = _Lowering(tm, keep).element(tm.model.system, 1)
    if prop is not None:
        owner = root.find(prop.scope)
        owner.objective = compile_expr(prop.expr, owner)
    return bt, root


def slice(bt: BlockTable, tm: TypedModel, prop: Property):
    keep = slice_blocks(bt, tm, prop)
    bt2 = BlockTable([r for r in bt.records if r.path in keep])
    _, root = build_tables(tm, prop, keep)
    return bt2, root, keep


def lower(tm: TypedModel, prop: Property | None = None, slicing: bool = True) -> Program:
    bt = build_block_table(tm)
    keep = slice_blocks(bt, tm, prop) if slicing and prop is not None else frozenset(r.path for r in bt.records)
    _, root = build_tables(tm, prop, keep)
    split_rates(root)
    finalize(root)
    owner = tuple(prop.scope) if prop is not None else ()
    return Program(tm, bt, root, prop, owner, keep, slicing and prop is not None)


# ---------------------------------------------------------------------------
# debugging dump


def ir_to_json(p: Program) -> dict:
    def el(e: SubsystemIR):
        act = None
        if e.activation is not None:
            act = {"kind": e.activation.kind, "reset": e.activation.reset, "edge": e.activation.edge, "n": e.activation.n}
        return {
            "path": e.name,
            "rate": e.rate,
            "activation": act,
            "inputs": [[v.name, str(v.type)] for v in e.inputs],
            "control": [e.control.name, str(e.control.type)] if e.control else None,
            "outputs": [[v.name, str(v.type)] for v in e.outputs],
            "states": [[s.name, str(s.type), str(s.init.attr)] for s in e.own_states],
            "wrapper_states": [[s.name, str(s.type), str(s.init.attr)] for s in e.wrapper_states],
            "aux": [[v.name, str(v.type)] for v in e.own_aux],
            "equations": [_eq_json(q) for q in e.equations],
            "objective": str(e.objective) if e.objective is not None else None,
            "children": [el(c) for c in e.children],
        }

    return {
        "schema": IR_SCHEMA,
        "model": p.tm.model.name,
        "property": p.prop.id if p.prop else None,
        "sliced": p.sliced,
        "block_count": p.block_count,
        "blocks": [
            {"index": r.index, "path": r.name, "type": r.type, "rate": r.rate, "stub": r.stub,
             "in_types": [str(t) if t else None for t in r.in_types], "out_types": [str(t) for t in r.out_types],
             "preds": {str(k): [p.bt[v[0]].name, v[1]] for k, v in r.preds.items()}}
            for r in p.bt.records if r.path in p.kept
        ],
        "root": el(p.root),
    }


def _eq_json(q: Eq):
    if q.kind == "call":
        return {"kind": "call", "child": q.child.name}
    if q.kind == "bus":
        return {"kind": "bus", "target": q.target, "members": [str(a) for a in q.args]}
    return {"kind": q.kind, "target": q.target, "expr": str(q.expr)}


def dump_ir(p: Program) -> str:
    return json.dumps(ir_to_json(p), indent=2)
