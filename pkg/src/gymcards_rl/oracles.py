"""Expert policies and exact solvers.

Enumeration orders are fixed so that datasets generated from these solvers
are reproducible byte for byte:

* EZPoints: operands in dealt order then swapped; ``+`` before ``*``.
* Points24: index permutations in lexicographic order, then operator
  triples in ``+ - * /`` product order, then the five tree shapes
  listed in ``_SHAPES``. Solutions are fully parenthesized except at the root.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from .env_core import Observation
from .formula import eval_formula

# --------------------------------------------------------------------------
# NumberLine


def numberline_expert(obs: Observation) -> str:
    sym = obs.symbolic
    return "+" if sym["current"] < sym["target"] else "-"


# --------------------------------------------------------------------------
# EZPoints / Points24


def ezpoints_candidates(values: Sequence[int]) -> Iterator[list[str]]:
    a, b = values
    for x, y in ((a, b), (b, a)):
        for op in ("+", "*"):
            yield [str(x), op, str(y)]


def ezpoints_solve(values: Sequence[int]) -> list[str] | None:
    """First two-card formula over ``+``/``*`` equal to 12, or ``None``."""
    for cand in ezpoints_candidates(values):
        if eval_formula(cand) == 12:
            return cand
    return None


def _shape_tokens(shape: int, n: list[str], o: tuple[str, str, str]) -> list[str]:
    a, b, c, d = n
    p, q, r = o
    if shape == 0:  # ((a p b) q c) r d
        return ["(", "(", a, p, b, ")", q, c, ")", r, d]
    if shape == 1:  # (a p (b q c)) r d
        return ["(", a, p, "(", b, q, c, ")", ")", r, d]
    if shape == 2:  # (a p b) q (c r d)
        return ["(", a, p, b, ")", q, "(", c, r, d, ")"]
    if shape == 3:  # a p ((b q c) r d)
        return [a, p, "(", "(", b, q, c, ")", r, d, ")"]
    return [a, p, "(", b, q, "(", c, r, d, ")", ")"]  # a p (b q (c r d))


_SHAPES = range(5)
_OPS4 = ("+", "-", "*", "/")


def points24_candidates(values: Sequence[int]) -> Iterator[list[str]]:
    """All 24 * 64 * 5 = 7680 candidate formulas in the fixed enumeration order."""
    for perm in itertools.permutations(range(len(values))):
        nums = [str(values[i]) for i in perm]
        for ops in itertools.product(_OPS4, repeat=3):
            for shape in _SHAPES:
                yield _shape_tokens(shape, nums, ops)


def target_solutions(values: Sequence[int], target: int) -> Iterator[list[str]]:
    cands = ezpoints_candidates(values) if len(values) == 2 else points24_candidates(values)
    for cand in cands:
        if eval_formula(cand) == target:
            yield cand


@lru_cache(maxsize=4096)
def _points24_solve_cached(values: tuple[int, ...]) -> tuple[str, ...] | None:
    for cand in target_solutions(values, 24):
        return tuple(cand)
    return None


def points24_solve(values: Sequence[int]) -> list[str] | None:
    """First fully parenthesized formula equal to 24 (exact rationals), or ``None``."""
    sol = _points24_solve_cached(tuple(values))
    return list(sol) if sol is not None else None


def plan_for_prefix(values: Sequence[int], target: int, prefix: Sequence[str]) -> list[str] | None:
    """First solution in enumeration order that extends ``prefix``."""
    prefix = list(prefix)
    if not prefix:
        first = ezpoints_solve(values) if len(values) == 2 else points24_solve(values)
        return first
    for sol in target_solutions(values, target):
        if sol[: len(prefix)] == prefix:
            return sol
    return None


def formula_expert(obs: Observation) -> str | None:
    """Next token of the solver plan for the current formula, ``"="`` when complete.

    Returns ``None`` when no solution extends the current formula.
    """
    sym = obs.symbolic
    formula = sym["formula"]
    plan = plan_for_prefix(sym["values"], sym["target"], formula)
    if plan is None:
        return None
    if len(formula) == len(plan):
        return "="
    return plan[len(formula)]


# --------------------------------------------------------------------------
# Blackjack

# Draw probabilities of card values under the infinite deck.
CARD_PROBS: dict[int, Fraction] = {v: Fraction(1, 13) for v in range(1, 10)}
CARD_PROBS[10] = Fraction(4, 13)
DEALER_FINALS = (17, 18, 19, 20, 21, 22)  # 22 stands for "bust"


@dataclass(frozen=True)
class BlackjackAbstractState:
    player_sum: int
    dealer_upvalue: int
    usable_ace: bool

    @classmethod
    def from_observation(cls, obs: Observation) -> "BlackjackAbstractState":
        s = obs.symbolic
        return cls(s["player_sum"], s["dealer_upvalue"], s["usable_ace"])


def _best(raw: int, ace: bool) -> int:
    return raw + 10 if ace and raw + 10 <= 21 else raw


def _canonical(state: BlackjackAbstractState) -> tuple[int, bool]:
    """(raw sum counting aces as 1, soft-ace flag) for an abstract state."""
    if state.usable_ace:
        return state.player_sum - 10, True
    return state.player_sum, False


@lru_cache(maxsize=None)
def _dealer_from(raw: int, ace: bool) -> tuple[Fraction, ...]:
    best = _best(raw, ace)
    if best > 21:
        return tuple(Fraction(int(f == 22)) for f in DEALER_FINALS)
    if best >= 17:
        return tuple(Fraction(int(f == best)) for f in DEALER_FINALS)
    dist = [Fraction(0)] * len(DEALER_FINALS)
    for v, p in CARD_PROBS.items():
        sub = _dealer_from(raw + v, ace or v == 1)
        for i, q in enumerate(sub):
            dist[i] += p * q
    return tuple(dist)


@lru_cache(maxsize=None)
def dealer_distribution(upvalue: int) -> dict[int, Fraction]:
    """Exact distribution of the dealer's final total (22 = bust) given the upcard."""
    dist = _dealer_from(upvalue, upvalue == 1)
    return dict(zip(DEALER_FINALS, dist))


def _stand_outcomes(best: int, upvalue: int) -> tuple[Fraction, Fraction, Fraction]:
    """(win, draw, loss) probabilities of standing on ``best``."""
    win = draw = loss = Fraction(0)
    for final, p in dealer_distribution(upvalue).items():
        if final == 22 or final < best:
            win += p
        elif final == best:
            draw += p
        else:
            loss += p
    return win, draw, loss


Policy = Callable[[BlackjackAbstractState], str]


class BlackjackEvaluator:
    """Exact expectimax/policy evaluation over the infinite-deck blackjack MDP."""

    def __init__(self, policy: Policy | None = None) -> None:
        self.policy = policy
        self._v: dict[tuple[int, bool, int], tuple[Fraction, Fraction, Fraction, Fraction, str]] = {}

    def stand_value(self, raw: int, ace: bool, up: int) -> Fraction:
        win, _, loss = _stand_outcomes(_best(raw, ace), up)
        return win - loss

    def hit_value(self, raw: int, ace: bool, up: int) -> Fraction:
        total = Fraction(0)
        for v, p in CARD_PROBS.items():
            nraw, nace = raw + v, ace or v == 1
            if _best(nraw, nace) > 21:
                total -= p
            else:
                total += p * self.solve(nraw, nace, up)[0]
        return total

    def solve(self, raw: int, ace: bool, up: int) -> tuple[Fraction, Fraction, Fraction, Fraction, str]:
        """(value, win, draw, loss, action) at a live player hand."""
        ace = ace and raw + 10 <= 21
        key = (raw, ace, up)
        if key in self._v:
            return self._v[key]
        best = _best(raw, ace)
        stand = self.stand_value(raw, ace, up)
        hit = self.hit_value(raw, ace, up) if best < 21 else None
        if self.policy is None:
            action = "hit" if hit is not None and hit > stand else "stand"
        else:
            action = self.policy(BlackjackAbstractState(best, up, ace))
            if best >= 21 and action == "hit" and hit is None:
                hit = self.hit_value(raw, ace, up)
        if action == "stand":
            win, draw, loss = _stand_outcomes(best, up)
            out = (stand, win, draw, loss, action)
        else:
            win = draw = loss = Fraction(0)
            for v, p in CARD_PROBS.items():
                nraw, nace = raw + v, ace or v == 1
                if _best(nraw, nace) > 21:
                    loss += p
                else:
                    _, w, d, lo, _ = self.solve(nraw, nace, up)
                    win, draw, loss = win + p * w, draw + p * d, loss + p * lo
            assert hit is not None
            out = (hit, win, draw, loss, action)
        self._v[key] = out
        return out

    def q_values(self, state: BlackjackAbstractState) -> dict[str, Fraction]:
        raw, ace = _canonical(state)
        return {
            "stand": self.stand_value(raw, ace, state.dealer_upvalue),
            "hit": self.hit_value(raw, ace, state.dealer_upvalue),
        }

    def action(self, state: BlackjackAbstractState) -> str:
        raw, ace = _canonical(state)
        return self.solve(raw, ace, state.dealer_upvalue)[4]

    def value(self, state: BlackjackAbstractState) -> Fraction:
        raw, ace = _canonical(state)
        return self.solve(raw, ace, state.dealer_upvalue)[0]


_OPTIMAL = BlackjackEvaluator()


def blackjack_optimal(state: BlackjackAbstractState) -> str:
    """Expected-reward-maximizing action; ties go to ``"stand"``."""
    return _OPTIMAL.action(state)


def blackjack_expert(obs: Observation) -> str:
    return blackjack_optimal(BlackjackAbstractState.from_observation(obs))


@dataclass(frozen=True)
class BlackjackValue:
    value: float
    win_prob: float
    draw_prob: float
    loss_prob: float


def blackjack_policy_value(policy: Policy | None = None, natural_bonus: bool = False) -> BlackjackValue:
    """Exact per-episode expectation from the initial-deal distribution.

    ``policy=None`` evaluates the optimal policy.
    """
    ev = _OPTIMAL if policy is None else BlackjackEvaluator(policy)
    value = win = draw = loss = Fraction(0)
    for c1, p1 in CARD_PROBS.items():
        for c2, p2 in CARD_PROBS.items():
            for up, pu in CARD_PROBS.items():
                p = p1 * p2 * pu
                raw, ace = c1 + c2, c1 == 1 or c2 == 1
                v, w, d, lo, action = ev.solve(raw, ace, up)
                if natural_bonus and sorted((c1, c2)) == [1, 10] and action == "stand":
                    v = Fraction(3, 2) * w - lo
                value += p * v
                win += p * w
                draw += p * d
                loss += p * lo
    return BlackjackValue(float(value), float(win), float(draw), float(loss))


def blackjack_optimal_value(natural_bonus: bool = False) -> BlackjackValue:
    return blackjack_policy_value(None, natural_bonus)


# --------------------------------------------------------------------------


def expert_action(obs: Observation) -> str | None:
    """Oracle action for any task's observation."""
    if obs.task_id == "numberline":
        return numberline_expert(obs)
    if obs.task_id == "blackjack":
        return blackjack_expert(obs)
    return formula_expert(obs)
