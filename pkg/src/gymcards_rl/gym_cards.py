"""Rules, transitions and rewards for NumberLine, EZPoints, Points24 and Blackjack."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .env_core import Env
from .formula import eval_formula

RANKS = ("A", "2", "3", "4", "5", "6", "7", "8", "9", "T", "J", "Q", "K")
SUITS = ("S", "H", "D", "C")
_RANK_DISPLAY = {"T": "10"}


@dataclass(frozen=True)
class Card:
    rank: str
    suit: str

    def value(self, face_mode: bool = False) -> int:
        """Numeric value; ace is 1, J/Q/K are 10 (or 11/12/13 with ``face_mode``)."""
        i = RANKS.index(self.rank)
        if i >= 10:
            return i + 1 if face_mode else 10
        return i + 1

    @property
    def display(self) -> str:
        return _RANK_DISPLAY.get(self.rank, self.rank)

    def __str__(self) -> str:
        return self.rank + self.suit

    @classmethod
    def parse(cls, text: str) -> "Card":
        if len(text) != 2 or text[0] not in RANKS or text[1] not in SUITS:
            raise ValueError(f"bad card string {text!r}")
        return cls(text[0], text[1])


def draw_card(rng: np.random.Generator) -> Card:
    """Uniform over 13 ranks (infinite deck); the suit is cosmetic."""
    r = int(rng.integers(13))
    s = int(rng.integers(4))
    return Card(RANKS[r], SUITS[s])


# --------------------------------------------------------------------------
# NumberLine


def numberline_transition(target: int, current: int, action: str, n_max: int) -> tuple[int, float, bool]:
    """One NumberLine move; returns (new current, reward, reached target).

    Blocked boundary moves leave the distance unchanged and are penalized
    like any other move that does not strictly approach the target.
    """
    if action not in ("+", "-"):
        raise ValueError(action)
    step = 1 if action == "+" else -1
    nxt = min(max(current + step, 0), n_max)
    if nxt == target:
        return nxt, 1.0, True
    if abs(target - nxt) >= abs(target - current):
        return nxt, -1.0, False
    return nxt, 0.0, False


class NumberLine(Env):
    task_id = "numberline"
    action_space = ("+", "-")

    def __init__(self, n_max: int = 5) -> None:
        super().__init__()
        if n_max < 1:
            raise ValueError("n_max must be positive")
        self.n_max = n_max
        self.target = 0
        self.current = 0

    @property
    def max_steps(self) -> int:
        return 2 * self.n_max

    def _reset_state(self) -> None:
        while True:
            x = int(self.rng.integers(self.n_max + 1))
            y = int(self.rng.integers(self.n_max + 1))
            if x != y:
                break
        self.target, self.current = x, y

    def set_state(self, target: int, current: int) -> None:
        """Force a state (tests and dataset tooling)."""
        self.target, self.current = target, current

    def _transition(self, action: str) -> tuple[float, bool, dict[str, Any]]:
        self.current, reward, reached = numberline_transition(self.target, self.current, action, self.n_max)
        return reward, reached, {"success": reached}

    def symbolic(self) -> dict[str, Any]:
        return {"target": self.target, "current": self.current, "n_max": self.n_max}

    @staticmethod
    def render_text(symbolic: dict[str, Any]) -> str:
        return f"Target: {symbolic['target']}\nCurrent: {symbolic['current']}"


# --------------------------------------------------------------------------
# EZPoints / Points24


class FormulaGame(Env):
    """Append-only formula building over dealt cards, shared by EZPoints and Points24."""

    target_value = 0
    n_cards = 0
    operators: tuple[str, ...] = ()
    horizon = 0

    def __init__(self, face_mode: bool = False) -> None:
        super().__init__()
        self.face_mode = face_mode
        top = 13 if face_mode else 10
        self.numbers = tuple(str(v) for v in range(1, top + 1))
        self.action_space = self.numbers + self.operators + ("=",)
        self.cards: list[Card] = []
        self.used: list[bool] = []
        self.formula: list[str] = []

    @property
    def max_steps(self) -> int:
        return self.horizon

    @property
    def values(self) -> list[int]:
        return [c.value(self.face_mode) for c in self.cards]

    def _sample_cards(self) -> list[Card]:
        return [draw_card(self.rng) for _ in range(self.n_cards)]

    def _reset_state(self) -> None:
        self.cards = self._sample_cards()
        self.used = [False] * self.n_cards
        self.formula = []

    def set_state(self, cards: list[Card], formula: list[str] | None = None) -> None:
        """Force cards and a formula prefix, marking the numbers in it as used."""
        self.cards = list(cards)
        self.used = [False] * len(cards)
        self.formula = []
        for tok in formula or []:
            if tok.isdigit():
                idx = self._unused_index(int(tok))
                if idx is None:
                    raise ValueError(f"formula uses {tok} more often than dealt")
                self.used[idx] = True
            self.formula.append(tok)

    def _unused_index(self, value: int) -> int | None:
        for i, v in enumerate(self.values):
            if v == value and not self.used[i]:
                return i
        return None

    def formula_success(self, tokens: list[str]) -> bool:
        """Valid, uses every dealt value exactly once, and hits the target."""
        nums = sorted(int(t) for t in tokens if t.isdigit())
        if nums != sorted(self.values):
            return False
        return eval_formula(tokens) == self.target_value

    def _transition(self, action: str) -> tuple[float, bool, dict[str, Any]]:
        if action == "=":
            ok = self.formula_success(self.formula)
            return (10.0 if ok else -1.0), True, {"success": ok}
        if action.isdigit():
            idx = self._unused_index(int(action))
            if idx is None:
                return -1.0, False, {"illegal": True}
            self.used[idx] = True
        self.formula.append(action)
        return 0.0, False, {}

    def symbolic(self) -> dict[str, Any]:
        return {
            "cards": [str(c) for c in self.cards],
            "values": self.values,
            "used": list(self.used),
            "formula": list(self.formula),
            "target": self.target_value,
            "face_mode": self.face_mode,
        }

    @staticmethod
    def render_text(symbolic: dict[str, Any]) -> str:
        cards = " ".join(symbolic["cards"])
        formula = " ".join(symbolic["formula"])
        return f"Cards: {cards}\nFormula: {formula}"


class EZPoints(FormulaGame):
    task_id = "ezpoints"
    target_value = 12
    n_cards = 2
    operators = ("+", "*")
    horizon = 5

    def _sample_cards(self) -> list[Card]:
        return ezpoints_sample_cards(self.rng, self.face_mode)


class Points24(FormulaGame):
    task_id = "points24"
    target_value = 24
    n_cards = 4
    operators = ("+", "-", "*", "/", "(", ")")
    horizon = 20


def ezpoints_sample_cards(rng: np.random.Generator, face_mode: bool = False) -> list[Card]:
    """Rejection-sample a two-card deal that the brute-force solver can make 12 from."""
    from .oracles import ezpoints_solve

    while True:
        cards = [draw_card(rng), draw_card(rng)]
        if ezpoints_solve([c.value(face_mode) for c in cards]) is not None:
            return cards


# --------------------------------------------------------------------------
# Blackjack


def hand_value(values: list[int]) -> tuple[int, bool]:
    """Best total and whether an ace is being counted as 11."""
    total = sum(values)
    if 1 in values and total + 10 <= 21:
        return total + 10, True
    return total, False


def is_natural(values: list[int]) -> bool:
    return len(values) == 2 and sorted(values) == [1, 10]


class Blackjack(Env):
    """Blackjack-v1 rules: infinite deck, dealer hits below 17, stands on all 17s."""

    task_id = "blackjack"
    action_space = ("stand", "hit")

    def __init__(self, natural_bonus: bool = False) -> None:
        super().__init__()
        self.natural_bonus = natural_bonus
        self.player: list[Card] = []
        self.dealer: list[Card] = []

    @property
    def max_steps(self) -> int:
        # 20 hits always bust a hand, so this horizon never cuts a live episode.
        return 20

    def _reset_state(self) -> None:
        self.dealer = [draw_card(self.rng), draw_card(self.rng)]
        self.player = [draw_card(self.rng), draw_card(self.rng)]

    def set_state(self, player: list[Card], dealer: list[Card]) -> None:
        self.player, self.dealer = list(player), list(dealer)

    @staticmethod
    def _vals(cards: list[Card]) -> list[int]:
        return [c.value() for c in cards]

    def player_total(self) -> tuple[int, bool]:
        return hand_value(self._vals(self.player))

    def _settle(self) -> tuple[float, dict[str, Any]]:
        while hand_value(self._vals(self.dealer))[0] < 17:
            self.dealer.append(draw_card(self.rng))
        player, _ = self.player_total()
        dealer, _ = hand_value(self._vals(self.dealer))
        if dealer > 21 or player > dealer:
            reward = 1.0
        elif player == dealer:
            reward = 0.0
        else:
            reward = -1.0
        if reward == 1.0 and self.natural_bonus and is_natural(self._vals(self.player)):
            reward = 1.5
        return reward, {"success": reward > 0, "dealer_sum": dealer}

    def _transition(self, action: str) -> tuple[float, bool, dict[str, Any]]:
        if action == "hit":
            self.player.append(draw_card(self.rng))
            if self.player_total()[0] > 21:
                return -1.0, True, {}
            return 0.0, False, {}
        reward, info = self._settle()
        return reward, True, info

    def _on_truncate(self) -> float:
        reward, _ = self._settle()
        return reward

    def symbolic(self) -> dict[str, Any]:
        total, usable = self.player_total()
        sym: dict[str, Any] = {
            "player": [str(c) for c in self.player],
            "player_sum": total,
            "usable_ace": usable,
            "dealer_upvalue": self.dealer[0].value() if self.dealer else 0,
        }
        if self.done and self.t > 0:
            sym["dealer"] = [str(c) for c in self.dealer]
            sym["dealer_sum"] = hand_value(self._vals(self.dealer))[0]
        else:
            sym["dealer"] = [str(self.dealer[0])] if self.dealer else []
        return sym

    @staticmethod
    def render_text(symbolic: dict[str, Any]) -> str:
        dealer = " ".join(symbolic["dealer"])
        if "dealer_sum" in symbolic:
            dealer_line = f"Dealer: {dealer} ({symbolic['dealer_sum']})"
        else:
            dealer_line = f"Dealer: {dealer} ??"
        player = " ".join(symbolic["player"])
        return f"{dealer_line}\nPlayer: {player} ({symbolic['player_sum']})"


TASKS = ("numberline", "ezpoints", "points24", "blackjack")


def make_env(task: str, n_max: int = 5, face_mode: bool = False, natural_bonus: bool = False) -> Env:
    if task == "numberline":
        return NumberLine(n_max)
    if task == "ezpoints":
        return EZPoints(face_mode)
    if task == "points24":
        return Points24(face_mode)
    if task == "blackjack":
        return Blackjack(natural_bonus)
    raise ValueError(f"unknown task {task!r}")
