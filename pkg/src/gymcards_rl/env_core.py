"""Environment abstraction shared by every task.

An environment owns one RNG per episode, derived from the reset seed and
split into two independent streams: ``dynamics`` (card draws, initial
states) and ``fallback`` (uniform draws made by the action parser when a
policy's text contains no legal action). Policy sampling never touches
either stream, so replaying the recorded parsed actions through a fresh
environment reproduces an episode exactly.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class EnvUsageError(RuntimeError):
    """Raised on contract violations such as stepping a finished episode."""


def check_action_label(text: str) -> str:
    if not text or text != text.strip() or text != text.lower():
        raise ValueError(f"invalid action label {text!r}")
    return text


@dataclass(frozen=True)
class Observation:
    task_id: str
    symbolic: dict[str, Any]
    text_render: str
    legal_actions: tuple[str, ...]
    step_index: int

    def to_json(self) -> dict[str, Any]:
        return {
            "task": self.task_id,
            "symbolic": self.symbolic,
            "text": self.text_render,
            "legal_actions": list(self.legal_actions),
            "step_index": self.step_index,
        }


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict[str, Any] = field(default_factory=dict)


def split_seed(seed: int, n: int) -> list[np.random.Generator]:
    """Independent generators spawned from one integer seed."""
    ss = np.random.SeedSequence(int(seed) % (1 << 64))
    return [np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(n)]


class Env(abc.ABC):
    """Base class: seeded reset, step bookkeeping, horizon and done handling.

    Subclasses implement ``_reset_state``, ``_transition``, ``symbolic`` and
    ``render_text``.
    """

    task_id: str = ""
    action_space: tuple[str, ...] = ()

    def __init__(self) -> None:
        self.t = 0
        self.done = True
        self.seed: int | None = None
        self.rng: np.random.Generator = split_seed(0, 1)[0]
        self.fallback_rng: np.random.Generator = split_seed(0, 1)[0]

    @property
    @abc.abstractmethod
    def max_steps(self) -> int:
        """Task horizon T."""

    @abc.abstractmethod
    def _reset_state(self) -> None: ...

    @abc.abstractmethod
    def _transition(self, action: str) -> tuple[float, bool, dict[str, Any]]:
        """Apply ``action`` to the internal state; return (reward, goal_done, info)."""

    @abc.abstractmethod
    def symbolic(self) -> dict[str, Any]: ...

    @staticmethod
    @abc.abstractmethod
    def render_text(symbolic: dict[str, Any]) -> str: ...

    def legal_actions(self) -> tuple[str, ...]:
        return self.action_space

    def observe(self) -> Observation:
        sym = self.symbolic()
        return Observation(
            task_id=self.task_id,
            symbolic=sym,
            text_render=self.render_text(sym),
            legal_actions=self.legal_actions(),
            step_index=self.t,
        )

    def reset(self, seed: int) -> Observation:
        self.seed = int(seed)
        self.rng, self.fallback_rng = split_seed(seed, 2)
        self.t = 0
        self.done = False
        self._reset_state()
        return self.observe()

    def step(self, action: str) -> StepResult:
        if self.done:
            raise EnvUsageError("episode finished")
        if action not in self.action_space:
            raise EnvUsageError(f"action {action!r} is not in the {self.task_id} action space")
        reward, goal_done, info = self._transition(action)
        self.t += 1
        done = goal_done or self.t >= self.max_steps
        if done and not goal_done:
            reward += self._on_truncate()
        self.done = done
        info.setdefault("illegal", False)
        info.setdefault("success", False)
        return StepResult(self.observe(), float(reward), done, info)

    def _on_truncate(self) -> float:
        """Extra reward when the horizon cuts a live episode (none by default)."""
        return 0.0
