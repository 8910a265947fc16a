"""Prompt construction, action parsing, and thought/action segmentation.

``build_prompt`` turns an observation into the instruction text given to a
policy. ``parse_action`` maps arbitrary output text to a legal action,
falling back to a uniform draw when no legal ``"action": value`` pair is
found. ``segment_utterance`` splits a token sequence into the thought part
and the action-value part using the same last-occurrence rule as the parser.
"""

from __future__ import annotations

import re
from collections.abc import Sequence
from importlib import resources

import numpy as np

from .env_core import Observation

PROMPT_VERSION = "1"

_ACTION_KEY_RE = re.compile(r'"action" ?:')
# Characters that end an action value.
_VALUE_END = frozenset('",}\n')
_STRIP_CHARS = " \t\"'{}"


def load_template(task: str, cot: bool) -> str:
    name = f"{task}_{'cot' if cot else 'nocot'}.txt"
    return resources.files("gymcards_rl.prompts").joinpath(name).read_text(encoding="utf-8")


def _face_text(face_mode: bool) -> str:
    return "'11', '12', and '13'" if face_mode else "'10'"


def build_prompt(obs: Observation, cot: bool = True) -> str:
    """Instantiate the task template for ``obs``.

    Formula tasks get the current formula (concatenated, e.g. ``'(2'``) and
    the legal-action list; NumberLine and Blackjack prompts are constant.
    """
    text = load_template(obs.task_id, cot)
    if "<<" not in text:
        return text
    sym = obs.symbolic
    return (
        text.replace("<<formula>>", "".join(sym["formula"]))
        .replace("<<actions>>", str(list(obs.legal_actions)))
        .replace("<<face>>", _face_text(sym.get("face_mode", False)))
    )


def extract_action_value(text: str) -> str | None:
    """Raw value after the last ``"action":`` key, or None when the key is absent."""
    last = None
    for m in _ACTION_KEY_RE.finditer(text):
        last = m
    if last is None:
        return None
    i = last.end()
    while i < len(text) and text[i] in " \t":
        i += 1
    if i < len(text) and text[i] == '"':
        i += 1
    j = i
    while j < len(text) and text[j] not in _VALUE_END:
        j += 1
    return text[i:j]


def normalize_action(value: str) -> str:
    return value.strip(_STRIP_CHARS).lower()


def parse_action(
    text: str | bytes, action_space: Sequence[str], rng: np.random.Generator
) -> tuple[str, bool]:
    """Map output text to ``(action, fallback)``.

    Never raises for any input. ``fallback`` is True when the action was
    drawn uniformly from ``action_space`` because the text had no legal
    action value.
    """
    if not action_space:
        raise ValueError("empty action space")
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    value = extract_action_value(text)
    if value is not None:
        candidate = normalize_action(value)
        if candidate in action_space:
            return candidate, False
    return action_space[int(rng.integers(len(action_space)))], True


# --------------------------------------------------------------------------
# Token-level segmentation

_OPEN_QUOTE = ('"', ' "')
_COLON = (":", " :")


def _is_delimiter(token: str) -> bool:
    return any(ch in _VALUE_END for ch in token)


def find_action_marker(tokens: Sequence[str]) -> int | None:
    """Index one past the last ``"action":`` marker subsequence, or None."""
    for i in range(len(tokens) - 4, -1, -1):
        if (
            tokens[i] in _OPEN_QUOTE
            and tokens[i + 1] == "action"
            and tokens[i + 2] == '"'
            and tokens[i + 3] in _COLON
        ):
            return i + 4
    return None


def segment_utterance(tokens: Sequence[str]) -> tuple[range, range]:
    """Split output tokens into ``(tht_range, act_range)``.

    The thought range runs from the start through the last action marker;
    the action range covers the value tokens after it, skipping one opening
    quote and stopping before the first closing delimiter. Without a marker
    the whole sequence is thought and the action range is empty.
    """
    n = len(tokens)
    end = find_action_marker(tokens)
    if end is None:
        return range(0, n), range(n, n)
    start = end
    if start < n and tokens[start] in _OPEN_QUOTE:
        start += 1
    stop = start
    while stop < n and not _is_delimiter(tokens[stop]):
        stop += 1
    return range(0, end), range(start, stop)
