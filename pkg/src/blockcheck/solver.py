"""Driver for an external SMT-LIB solver speaking over stdin/stdout."""

from __future__ import annotations

import importlib.util
import os
import shlex
import shutil
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass

from . import smtlib as S

Z3_COMMAND = "z3 -in -smt2"
CVC5_COMMAND = "cvc5 --lang smt2 --incremental"
SAT, UNSAT, UNKNOWN = "sat", "unsat", "unknown"
GRACE = 5.0  # seconds past the solver's own limit before the process is abandoned


class SolverError(RuntimeError):
    pass


class SolverMissing(SolverError):
    pass


@dataclass(frozen=True)
class CheckResult:
    status: str  # sat | unsat | unknown
    reason: str = ""  # for unknown: timeout | solver-reported text

    @property
    def is_sat(self) -> bool:
        return self.status == SAT

    @property
    def is_unsat(self) -> bool:
        return self.status == UNSAT


def default_solver() -> list[str] | None:
    """First available of: a cvc5 executable, the cvc5 Python bindings, z3.

    cvc5 comes first because it is far quicker than z3 on the bit-precise
    floating-point queries of the exact encoding.
    """
    if shutil.which("cvc5"):
        return shlex.split(CVC5_COMMAND)
    if importlib.util.find_spec("cvc5") is not None:
        return [sys.executable, "-m", "blockcheck.cvc5_pipe"]
    if shutil.which("z3"):
        return shlex.split(Z3_COMMAND)
    return None


def solver_command(cmd: str | None = None) -> list[str]:
    text = cmd or os.environ.get("BLOCKCHECK_SOLVER")
    argv = shlex.split(text) if text else default_solver()
    if not argv or shutil.which(argv[0]) is None:
        raise SolverMissing(
            f"solver executable {argv[0] if argv else text!r} not found; install one "
            "(`pip install cvc5` or `pip install z3-solver`) or pass --solver / set BLOCKCHECK_SOLVER")
    return argv


def solver_flavour(argv: list[str]) -> str:
    """``z3``, ``cvc5`` or ``other``; decides how per-check time limits are set."""
    if "blockcheck.cvc5_pipe" in argv:
        return "cvc5"
    base = os.path.basename(argv[0])
    for name in ("z3", "cvc5"):
        if base.startswith(name):
            return name
    return "other"


class SolverSession:
    """One solver process.

    Commands are buffered and flushed only before a check or a query, so
    submitting thousands of declarations costs no round trips.  Every
    command is also appended to ``transcript`` (and to ``transcript_path``
    if given), which replays as a standalone script.
    """

    def __init__(self, cmd: str | None = None, timeout: float | None = None, transcript_path: str | None = None,
                 counter: "CallCounter | None" = None):
        self.argv = solver_command(cmd)
        self.timeout = timeout
        self.transcript: list[str] = []
        self._pending: list[str] = []
        self._tfile = open(transcript_path, "w") if transcript_path else None
        self.calls = 0
        self.counter = counter
        self.dead = False
        self._last_sat = False
        self._lock = threading.Lock()
        self.flavour = solver_flavour(self.argv)
        self._solver_limit = None
        self.proc = subprocess.Popen(
            self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
            text=True, bufsize=1)
        self.submit([S.set_option("print-success", "false"), S.set_option("produce-models", "true")])

    # -- plumbing -------------------------------------------------------------------

    def _record(self, text: str):
        self.transcript.append(text)
        if self._tfile is not None:
            self._tfile.write(text + "\n")
            self._tfile.flush()

    def submit(self, cmds):
        """Queue commands (Command objects or raw text)."""
        if self.dead:
            raise SolverError("solver session is closed")
        for c in cmds:
            text = c if isinstance(c, str) else S.print_command(c)
            self._record(text)
            if not isinstance(c, str) and c.kind == "comment":
                continue
            self._pending.append(text)
            self._last_sat = False

    def _flush(self):
        if not self._pending:
            return
        data = "\n".join(self._pending) + "\n"
        self._pending = []
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self.dead = True
            raise SolverError(f"solver process died: {exc}") from None

    def _read_sexpr(self, deadline: float | None) -> str:
        """One complete S-expression (or atom) from the solver's output."""
        buf = []
        depth = 0
        started = False
        result: list = []

        def reader():
            nonlocal depth, started
            while True:
                line = self.proc.stdout.readline()
                if not line:
                    result.append(None)
                    return
                buf.append(line)
                for ch in line:
                    if ch == "(":
                        depth += 1
                        started = True
                    elif ch == ")":
                        depth -= 1
                if line.strip() and (depth <= 0):
                    result.append("".join(buf))
                    return

        if deadline is None:
            reader()
        else:
            th = threading.Thread(target=reader, daemon=True)
            th.start()
            th.join(max(0.0, deadline - time.monotonic()))
            if th.is_alive():
                # the solver ignored its own time limit: interrupt, then give up on it
                self._interrupt()
                th.join(2.0)
                self.close(force=True)
                raise TimeoutError
        if not result or result[0] is None:
            self.dead = True
            raise SolverError("solver process terminated unexpectedly: " + "".join(buf).strip())
        return result[0].strip()

    def _interrupt(self):
        try:
            self.proc.send_signal(signal.SIGINT)
        except OSError:
            pass

    # -- queries --------------------------------------------------------------------

    def check_sat_assuming(self, literals, timeout: float | None = None) -> CheckResult:
        cmd = S.check_sat_assuming(literals)
        return self._check(cmd, timeout)

    def check_sat(self, timeout: float | None = None) -> CheckResult:
        return self._check(S.check_sat(), timeout)

    def _check(self, cmd, timeout):
        with self._lock:
            limit = timeout if timeout is not None else self.timeout
            if limit != self._solver_limit and self.flavour != "other":
                # per-check limits in milliseconds; 0 means none for cvc5
                ms = int(limit * 1000) if limit else 0
                if self.flavour == "z3":
                    self.submit([S.set_option("timeout", str(ms or 4294967295))])
                else:
                    self.submit([S.set_option("tlimit-per", str(ms))])
                self._solver_limit = limit
            self.submit([cmd])
            self.calls += 1
            if self.counter is not None:
                self.counter.bump()
            self._flush()
            deadline = time.monotonic() + limit + GRACE if limit else None
            try:
                reply = self._read_sexpr(deadline)
            except TimeoutError:
                return CheckResult(UNKNOWN, "timeout")
            if reply == SAT:
                self._last_sat = True
                return CheckResult(SAT)
            if reply == UNSAT:
                return CheckResult(UNSAT)
            if reply == UNKNOWN:
                self._pending.append("(get-info :reason-unknown)")
                self._flush()
                why = self._read_sexpr(None)
                m = S.parse_sexpr(why)
                why = m[1] if isinstance(m, list) and len(m) == 2 else why
                why = why.strip('"')
                if why in ("timeout", "canceled") or "timeout" in why.lower():
                    why = "timeout"
                return CheckResult(UNKNOWN, why)
            raise SolverError(f"malformed solver reply: {reply!r}")

    def get_values(self, terms) -> dict:
        """Values of ``terms`` (smtlib Terms) keyed by their printed form."""
        terms = list(terms)
        if not self._last_sat:
            raise SolverError("get-value needs a preceding sat answer")
        if not terms:
            return {}
        out = {}
        with self._lock:
            for i in range(0, len(terms), 200):
                chunk = terms[i:i + 200]
                self._pending.append(S.print_command(S.get_value(chunk)))
                self._flush()
                reply = self._read_sexpr(None)
                sx = S.parse_sexpr(reply)
                if not isinstance(sx, list) or (sx and sx[0] == "error"):
                    raise SolverError(f"get-value failed: {reply}")
                if len(sx) != len(chunk):
                    raise SolverError(f"get-value returned {len(sx)} values for {len(chunk)} terms")
                for t, pair in zip(chunk, sx):
                    out[S.print_term(t)] = S.parse_value(pair[1], t.sort)
        return out

    def close(self, force: bool = False):
        if self.proc.poll() is None:
            try:
                if not force:
                    self.proc.stdin.write("(exit)\n")
                    self.proc.stdin.flush()
                    self.proc.wait(2.0)
            except (OSError, subprocess.TimeoutExpired):
                pass
            if self.proc.poll() is None:
                self.proc.kill()
                self.proc.wait()
        for f in (self.proc.stdin, self.proc.stdout):
            try:
                f.close()
            except OSError:
                pass
        if self._tfile is not None:
            self._tfile.close()
            self._tfile = None
        self.dead = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def transcript_text(self) -> str:
        return "".join(t + "\n" for t in self.transcript)


class CallCounter:
    """Thread-safe count of check-sat calls, optionally tagged by level."""

    def __init__(self):
        self._n = 0
        self._lock = threading.Lock()

    def bump(self):
        with self._lock:
            self._n += 1

    @property
    def value(self) -> int:
        return self._n
