"""Exact-rational evaluation of arithmetic formulas built from card values.

Formulas are token lists over integer literals, ``+ - * /`` and parentheses.
Evaluation uses the shunting-yard algorithm with :class:`fractions.Fraction`
arithmetic, so no floating point is ever involved. Anything malformed
(dangling operator, adjacent numbers, unbalanced parentheses, unary minus,
division by zero, empty input) evaluates to ``None``.
"""

from __future__ import annotations

import re
from collections.abc import Sequence
from fractions import Fraction

OPERATORS = ("+", "-", "*", "/")
PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}

_TOKEN_RE = re.compile(r"\d+|[-+*/()]|\S")


def split_formula(text: str) -> list[str]:
    """Split formula text into tokens; accepts both ``"5+7"`` and ``"5 + 7"``."""
    return _TOKEN_RE.findall(text)


def format_formula(tokens: Sequence[str], sep: str = " ") -> str:
    """Serialize tokens. The default space-separated form is the wire format."""
    return sep.join(tokens)


def _apply(op: str, left: Fraction, right: Fraction) -> Fraction | None:
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if right == 0:
        return None
    return left / right


def eval_formula(tokens: Sequence[str] | str) -> Fraction | None:
    """Evaluate a formula exactly.

    Args:
        tokens: token sequence, or a string that is split with
            :func:`split_formula`.

    Returns:
        The exact value as a ``Fraction``, or ``None`` if the formula is
        invalid.
    """
    if isinstance(tokens, str):
        tokens = split_formula(tokens)
    if not tokens:
        return None

    values: list[Fraction] = []
    ops: list[str] = []
    # True when the next token must be an operand (number or "(").
    expect_operand = True

    def reduce_top() -> bool:
        op = ops.pop()
        if len(values) < 2:
            return False
        right = values.pop()
        left = values.pop()
        result = _apply(op, left, right)
        if result is None:
            return False
        values.append(result)
        return True

    for tok in tokens:
        if tok.isdigit():
            if not expect_operand:
                return None
            values.append(Fraction(int(tok)))
            expect_operand = False
        elif tok == "(":
            if not expect_operand:
                return None
            ops.append(tok)
        elif tok == ")":
            if expect_operand:
                return None
            while ops and ops[-1] != "(":
                if not reduce_top():
                    return None
            if not ops:
                return None
            ops.pop()
        elif tok in PRECEDENCE:
            if expect_operand:
                return None
            # Left associativity: pop while the stacked operator binds at least as tightly.
            while ops and ops[-1] != "(" and PRECEDENCE[ops[-1]] >= PRECEDENCE[tok]:
                if not reduce_top():
                    return None
            ops.append(tok)
            expect_operand = True
        else:
            return None

    if expect_operand:
        return None
    while ops:
        if ops[-1] == "(":
            return None
        if not reduce_top():
            return None
    if len(values) != 1:
        return None
    return values[0]
