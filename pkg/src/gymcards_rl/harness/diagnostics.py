"""Thought versus action log-probability magnitudes of a policy's own samples."""

from __future__ import annotations

import itertools

import numpy as np

from ..features import featurize
from ..sft import oracle_states
from ..token_policy import TokenPolicy


def logp_magnitudes(policy: TokenPolicy, task: str, n: int, seed: int = 0, temperature: float = 1.0,
                    max_tokens: int = 128, env_kwargs: dict | None = None, batch: int = 250) -> dict:
    """Sample ``n`` utterances on oracle-visited states and average the segment log-probs."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1A6]))
    states = list(itertools.islice(oracle_states(task, rng, **(env_kwargs or {})), n))
    tht, act, marker = [], [], []
    for s in range(0, n, batch):
        feats = np.stack([featurize(o) for o in states[s:s + batch]])
        for u in policy.sample(feats, rng, temperature, max_tokens):
            tht.append(u.logp_tht)
            act.append(u.logp_act)
            marker.append(len(u.act_range) > 0)
    return {
        "task": task,
        "samples": n,
        "mean_logp_tht": float(np.mean(tht)),
        "mean_logp_act": float(np.mean(act)),
        "mean_abs_logp_tht": float(np.mean(np.abs(tht))),
        "mean_abs_logp_act": float(np.mean(np.abs(act))),
        "action_segment_rate": float(np.mean(marker)),
    }
