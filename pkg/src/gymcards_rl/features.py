"""Fixed-length observation encodings fed to the token policy and value head."""

from __future__ import annotations

import numpy as np

from .env_core import Observation

BJ_SUM_LO, BJ_SUM_HI = 4, 21


def _formula_vocab(task: str, face_mode: bool) -> list[str]:
    top = 13 if face_mode else 10
    ops = ["+", "*"] if task == "ezpoints" else ["+", "-", "*", "/", "(", ")"]
    return [str(v) for v in range(1, top + 1)] + ops


def feature_dim(task: str, n_max: int = 5, face_mode: bool = False) -> int:
    if task == "numberline":
        return 2 * (n_max + 1)
    if task == "blackjack":
        return (BJ_SUM_HI - BJ_SUM_LO + 1) + 10 + 1
    top = 13 if face_mode else 10
    n_tok = len(_formula_vocab(task, face_mode))
    return top + n_tok + (n_tok + 1)


def featurize(obs: Observation) -> np.ndarray:
    """Encode ``obs.symbolic``.

    NumberLine: one-hot target and current. EZPoints/Points24: card-value
    counts, formula-token counts, one-hot of the last formula token (with an
    "empty" slot). Blackjack: one-hot player total, one-hot dealer upcard
    value, usable-ace bit.
    """
    s = obs.symbolic
    if obs.task_id == "numberline":
        n = s["n_max"] + 1
        f = np.zeros(2 * n)
        f[s["target"]] = 1.0
        f[n + s["current"]] = 1.0
        return f
    if obs.task_id == "blackjack":
        f = np.zeros(feature_dim("blackjack"))
        total = s["player_sum"]
        if BJ_SUM_LO <= total <= BJ_SUM_HI:
            f[total - BJ_SUM_LO] = 1.0
        off = BJ_SUM_HI - BJ_SUM_LO + 1
        f[off + s["dealer_upvalue"] - 1] = 1.0
        f[off + 10] = float(s["usable_ace"])
        return f
    face = s.get("face_mode", False)
    top = 13 if face else 10
    toks = _formula_vocab(obs.task_id, face)
    pos = {t: i for i, t in enumerate(toks)}
    f = np.zeros(feature_dim(obs.task_id, face_mode=face))
    for v in s["values"]:
        f[v - 1] += 1.0
    for t in s["formula"]:
        f[top + pos[t]] += 1.0
    last = s["formula"][-1] if s["formula"] else None
    f[top + len(toks) + (pos[last] + 1 if last is not None else 0)] = 1.0
    return f
