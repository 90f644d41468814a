"""Interactive SMT-LIB front end for the cvc5 Python bindings.

The cvc5 wheel ships no executable.  This module reads commands from
stdin and answers on stdout the way an interactive solver does, so the
driver can talk to it like any other solver process::

    python -m blockcheck.cvc5_pipe
"""

from __future__ import annotations

import sys


def split_commands(buf: str) -> tuple[list[str], str]:
    """Complete top-level S-expressions in ``buf`` plus the unfinished rest."""
    out = []
    depth = 0
    start = None
    i, n = 0, len(buf)
    while i < n:
        ch = buf[i]
        if ch == ";":
            j = buf.find("\n", i)
            if j < 0:
                break
            i = j + 1
            continue
        if ch == '"':
            j = i + 1
            while True:
                j = buf.find('"', j)
                if j < 0:
                    return out, buf[start if start is not None else i:]
                if j + 1 < n and buf[j + 1] == '"':
                    j += 2
                    continue
                break
            i = j + 1
            continue
        if ch == "|":
            j = buf.find("|", i + 1)
            if j < 0:
                break
            i = j + 1
            continue
        if ch == "(":
            if depth == 0:
                start = i
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0 and start is not None:
                out.append(buf[start:i + 1])
                start = None
        i += 1
    if start is not None:
        return out, buf[start:]
    return out, ""


class Pipe:
    def __init__(self, out=sys.stdout):
        import cvc5

        self.cvc5 = cvc5
        self.tm = cvc5.TermManager()
        self.solver = cvc5.Solver(self.tm)
        self.sm = cvc5.SymbolManager(self.tm)
        self.parser = cvc5.InputParser(self.solver, self.sm)
        self.out = out
        self.logic_set = False

    def run(self, text: str) -> bool:
        """Execute one command; False once the input asks to exit."""
        head = text[1:].lstrip().split(None, 1)[0].rstrip(")") if len(text) > 1 else ""
        if head == "exit":
            return False
        if not self.logic_set and head != "set-logic" and head not in ("set-option", "set-info"):
            # without a logic cvc5 prints warnings; all theories is what callers expect
            self._invoke("(set-logic ALL)")
        if head == "set-logic":
            self.logic_set = True
        reply = self._invoke(text)
        if reply:
            self.out.write(reply if reply.endswith("\n") else reply + "\n")
            self.out.flush()
        return True

    def _invoke(self, text: str) -> str:
        if text.startswith("(set-logic"):
            self.logic_set = True
        p = self.parser
        p.setIncrementalStringInput(self.cvc5.InputLanguage.SMT_LIB_2_6, "stdin")
        p.appendIncrementalStringInput(text)
        replies = []
        try:
            while True:
                cmd = p.nextCommand()
                if cmd.isNull():
                    break
                r = cmd.invoke(self.solver, self.sm)
                if r.startswith("unknown ("):
                    # the bindings append the reason, e.g. "unknown (TIMEOUT)"
                    r = "unknown\n"
                replies.append(r)
        except RuntimeError as exc:
            msg = str(exc).replace('"', '""')
            replies.append(f'(error "{msg}")\n')
        return "".join(replies)


def main(stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    pipe = Pipe(stdout or sys.stdout)
    buf = ""
    for line in stdin:
        buf += line
        cmds, buf = split_commands(buf)
        for c in cmds:
            if not pipe.run(c):
                return 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
