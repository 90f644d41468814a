import io

import pytest

from blockcheck.cvc5_pipe import main, split_commands


def test_split_complete_and_partial():
    cmds, rest = split_commands("(declare-const x Int)\n(assert (> x 0))\n(check")
    assert cmds == ["(declare-const x Int)", "(assert (> x 0))"]
    assert rest == "(check"


def test_split_skips_comments_strings_and_quoted_symbols():
    text = ';; a comment with ( paren\n(echo "a ) b ""q""")\n(declare-const |odd )| Int)\n'
    cmds, rest = split_commands(text)
    assert cmds == ['(echo "a ) b ""q""")', "(declare-const |odd )| Int)"]
    assert rest == ""


def test_split_unfinished_string():
    cmds, rest = split_commands('(echo "abc')
    assert cmds == [] and rest == '(echo "abc'


def test_main_answers_like_a_solver():
    pytest.importorskip("cvc5")
    out = io.StringIO()
    script = ("(set-option :print-success false)\n(declare-const x Int)\n(assert (> x 2))\n"
              "(check-sat)\n(assert (< x 0))\n(check-sat)\n(exit)\n(check-sat)\n")
    assert main(io.StringIO(script), out) == 0
    assert out.getvalue().split() == ["sat", "unsat"]


def test_main_reports_errors_inline():
    pytest.importorskip("cvc5")
    out = io.StringIO()
    main(io.StringIO("(assert y)\n(check-sat)\n"), out)
    lines = out.getvalue().splitlines()
    assert lines[0].startswith("(error ") and lines[-1] == "sat"
