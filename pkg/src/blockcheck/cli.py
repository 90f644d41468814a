"""Command-line interface: ``blockcheck check|encode|simulate``.

Exit codes: 0 valid / no violation, 1 falsified (validated counterexample),
2 unknown or candidate only, 3 usage, model or internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys

from . import __version__
from . import encoder as En
from . import engine as E
from . import frontend as F
from . import ir
from . import simulator as sim
from . import smtlib as S
from .core import ModelError
from .solver import SolverError, SolverMissing, solver_command

log = logging.getLogger("blockcheck")

EXIT_VALID, EXIT_FALSIFIED, EXIT_UNKNOWN, EXIT_ERROR = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)


# ---------------------------------------------------------------------------
# loading


def load_typed_model(path: str) -> F.TypedModel:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    diags: list = []
    model = F.load_model(text, diags)
    tm = F.infer_types(model, diags)
    for d in diags:
        log.warning("%s", d)
    return tm


def switch_objectives(tm: F.TypedModel, path: str) -> list:
    """Branch-coverage objectives for a Switch block.

    Two invariants, one per branch: "the criterion is never true" and
    "the criterion is never false".  A counterexample to either is an
    input sequence that reaches the branch.
    """
    parts = tuple(x for x in path.split("/") if x)
    if not parts:
        raise UsageError("switch objective needs a block path")
    scope, bid = parts[:-1], parts[-1]
    try:
        sub = tm.model.subsystem(scope)
        b = sub.block(bid)
    except KeyError:
        raise UsageError(f"no block {path!r}") from None
    if F.canonical_type(b.type) != "Switch":
        raise UsageError(f"{path!r} is a {b.type} block, not a Switch")
    src, port = F.driver(sub, bid, 2)
    u2 = f"sig({src}/{port})"
    crit = str(b.params.get("criteria", "u2 >= Threshold")).replace(" ", "")
    th = b.params.get("threshold", 0)
    cond = {"u2>=Threshold": f"{u2} >= {th}", "u2>Threshold": f"{u2} > {th}", "u2~=0": f"{u2} != 0"}.get(crit)
    if cond is None:
        raise UsageError(f"unsupported switch criteria {b.params.get('criteria')!r}")
    name = "_".join(parts)
    return [F.make_property(f"{name}.true", scope, f"!({cond})", tm),
            F.make_property(f"{name}.false", scope, cond, tm)]


def load_props(args, tm: F.TypedModel) -> list:
    props = []
    if getattr(args, "prop", None):
        with open(args.prop, encoding="utf-8") as fh:
            props += F.load_properties(fh.read(), tm)
    if getattr(args, "expr", None):
        props.append(F.make_property(args.prop_id or "inline", args.scope or "", args.expr, tm))
    if getattr(args, "objective", None):
        kind, _, target = args.objective.partition(":")
        if kind != "switch":
            raise UsageError(f"unknown objective kind {kind!r} (supported: switch:<block path>)")
        props += switch_objectives(tm, target)
    if getattr(args, "prop_id", None) and not getattr(args, "expr", None):
        props = [p for p in props if p.id == args.prop_id]
        if not props:
            raise UsageError(f"no property with id {args.prop_id!r}")
    return props


# ---------------------------------------------------------------------------
# commands


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in text)


def cmd_check(args) -> int:
    tm = load_typed_model(args.model)
    props = load_props(args, tm)
    if not props:
        raise UsageError("no property given (use --prop, --expr or --objective)")
    mode = args.encoding
    if mode is None and args.engine != "auto":
        mode = En.EXACT
    cfg = E.Config(mode=mode, engine=args.engine, max_k=args.max_k, timeout=args.timeout or None,
                   budget=args.budget, solver=args.solver, bounds=args.bounds == "on")
    solver_command(cfg.solver)  # fail early even if no query ends up reaching the solver
    slicing = args.slice == "on"
    reports, codes = [], []
    for p in props:
        prog = ir.lower(tm, p, slicing)
        artifacts = {}
        if args.emit_smt:
            cfg.transcripts = os.path.join(args.emit_smt, _slug(p.id))
            artifacts["smt_dir"] = cfg.transcripts
        if args.emit_ir:
            target = args.emit_ir if args.emit_ir != "-" else os.path.join(args.emit_smt or ".", f"{_slug(p.id)}.ir.json")
            if len(props) > 1 and args.emit_ir != "-":
                root, ext = os.path.splitext(args.emit_ir)
                target = f"{root}.{_slug(p.id)}{ext or '.json'}"
            os.makedirs(os.path.dirname(target) or ".", exist_ok=True)
            with open(target, "w", encoding="utf-8") as fh:
                fh.write(ir.dump_ir(prog))
            artifacts["ir"] = target
        v = E.check(prog, cfg)
        if v.trace is not None:
            target = _cex_path(args, p.id, len(props) > 1)
            with open(target, "w", encoding="utf-8", newline="") as fh:
                sim.write_trace_csv(v.trace, prog, fh)
            artifacts["cex_csv"] = target
        rep = E.report(v, prog, cfg, artifacts)
        reports.append(rep)
        codes.append(E.exit_code(v))
        log.info("%s: %s", p.id, v.status)
    out = reports[0] if len(reports) == 1 else {"schema": E.REPORT_SCHEMA + "-list", "tool_version": __version__,
                                                 "reports": reports}
    text = json.dumps(out, indent=2, default=str) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return combine_exit_codes(codes)


def combine_exit_codes(codes: list[int]) -> int:
    """Unknown dominates, then falsified, then valid."""
    if EXIT_UNKNOWN in codes:
        return EXIT_UNKNOWN
    if EXIT_FALSIFIED in codes:
        return EXIT_FALSIFIED
    return EXIT_VALID


def _cex_path(args, pid: str, many: bool) -> str:
    if args.cex:
        if not many:
            return args.cex
        root, ext = os.path.splitext(args.cex)
        return f"{root}.{_slug(pid)}{ext or '.csv'}"
    if args.out:
        root, _ = os.path.splitext(args.out)
        return f"{root}.{_slug(pid)}.cex.csv" if many else f"{root}.cex.csv"
    base = args.emit_smt or "."
    os.makedirs(base, exist_ok=True)
    return os.path.join(base, f"{_slug(pid)}.cex.csv")


def cmd_encode(args) -> int:
    tm = load_typed_model(args.model)
    props = load_props(args, tm)
    if len(props) > 1:
        raise UsageError("encode takes a single property (use --prop-id)")
    prog = ir.lower(tm, props[0] if props else None, args.slice == "on")
    top = None
    if args.level:
        chain = prog.chain()
        if not 1 <= args.level <= len(chain):
            raise UsageError(f"--level must be between 1 and {len(chain)}")
        top = chain[args.level - 1]
    text = S.print_script(En.encode_script(prog, args.encoding, args.k, top))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.emit_ir:
        with open(args.emit_ir, "w", encoding="utf-8") as fh:
            fh.write(ir.dump_ir(prog))
    return 0


def cmd_simulate(args) -> int:
    tm = load_typed_model(args.model)
    props = load_props(args, tm)
    if len(props) > 1:
        raise UsageError("simulate takes a single property (use --prop-id)")
    prop = props[0] if props else None
    prog = ir.lower(tm, prop, False)
    mode = args.mode
    if args.inputs:
        with open(args.inputs, encoding="utf-8", newline="") as fh:
            inputs = sim.read_inputs_csv(fh, prog, mode)
    else:
        n = args.steps if args.steps is not None else 10
        inputs = sim.random_inputs(prog, n, random.Random(args.seed), mode)
    n = args.steps if args.steps is not None else len(inputs)
    if len(inputs) < n:
        raise UsageError(f"inputs cover {len(inputs)} steps, {n} requested")
    tr = sim.simulate(prog, inputs, n, mode=mode)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            sim.write_trace_csv(tr, prog, fh)
    else:
        sys.stdout.write(sim.write_trace_csv(tr, prog))
    if prop is not None:
        stream = sys.stdout if args.out else sys.stderr
        j = sim.check_violation(tr, prog)
        print(f"{prop.id}: no violation" if j is None else f"{prop.id}: violation at step {j}", file=stream)
        return EXIT_FALSIFIED if j is not None else EXIT_VALID
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _common(p):
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--prop", help="property JSON file (one object or a list)")
    p.add_argument("--prop-id", help="select one property by id (or name an --expr property)")
    p.add_argument("--expr", help="inline property expression")
    p.add_argument("--scope", default="", help="subsystem path for --expr, e.g. S1")
    p.add_argument("--objective", help="generated objective, e.g. switch:S1/Switch")
    p.add_argument("--slice", choices=("on", "off"), default="on")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="blockcheck", description="SMT-based model checker for block-diagram models")
    ap.add_argument("--version", action="version", version=f"blockcheck {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    c = sub.add_parser("check", help="prove or falsify invariants")
    _common(c)
    c.add_argument("--engine", choices=("bmc", "kind", "auto"), default="auto")
    c.add_argument("--encoding", choices=(En.APPROX, En.EXACT), default=None,
                   help="default: approx BMC alongside exact BMC and k-induction (auto), exact otherwise")
    c.add_argument("--max-k", type=int, default=64)
    c.add_argument("--solver", help="solver command (env BLOCKCHECK_SOLVER)")
    c.add_argument("--timeout", type=float, default=300.0, help="seconds per solver call (0: none)")
    c.add_argument("--budget", type=float, default=None, help="seconds for the whole check")
    c.add_argument("-o", "--out", help="report JSON file (default: stdout)")
    c.add_argument("--cex", help="counterexample CSV file")
    c.add_argument("--emit-smt", metavar="DIR", help="write solver transcripts (.smt2) under DIR")
    c.add_argument("--emit-ir", nargs="?", const="-", metavar="FILE", help="write the lowered IR as JSON")
    c.add_argument("--bounds", choices=("on", "off"), default="on",
                   help="interval pre-analysis that skips provably unreachable violation steps")
    c.set_defaults(func=cmd_check)

    e = sub.add_parser("encode", help="print the SMT-LIB encoding")
    _common(e)
    e.add_argument("--encoding", choices=(En.APPROX, En.EXACT), default=En.APPROX)
    e.add_argument("-k", type=int, default=2, help="path length")
    e.add_argument("--level", type=int, default=None, help="encode the d-th element of the objective chain")
    e.add_argument("-o", "--out", help="output .smt2 file (default: stdout)")
    e.add_argument("--emit-ir", metavar="FILE", help="also write the lowered IR as JSON")
    e.set_defaults(func=cmd_encode)

    s = sub.add_parser("simulate", help="run the model on an input trace")
    _common(s)
    s.add_argument("--inputs", help="input CSV (header step,<input>...); random inputs if omitted")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--seed", type=int, default=0, help="seed for random inputs")
    s.add_argument("--mode", choices=(sim.MACHINE, sim.IDEAL), default=sim.MACHINE)
    s.add_argument("-o", "--out", help="trace CSV file (default: stdout)")
    s.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        if getattr(args, "max_k", 1) < 1:
            raise UsageError("--max-k must be >= 1")
        return args.func(args)
    except SolverMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (UsageError, ModelError, SolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
