"""Trajectory JSON-lines files and their replay check."""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from pathlib import Path

from ..gym_cards import make_env

TRAJECTORY_FIELDS = (
    "run_id", "episode", "t", "task", "reset_seed", "obs_text", "prompt", "utterance_text",
    "parsed_action", "fallback", "reward", "done", "logp_tht", "logp_act", "logp_scaled", "value_pred",
)


def write_jsonl(records: Iterable[dict], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay(records: Sequence[dict], env_kwargs: dict | None = None) -> list[str]:
    """Re-step every recorded episode from its reset seed; returns mismatch descriptions.

    Episodes cut by a buffer boundary are replayed as far as they were recorded.
    """
    episodes: dict[tuple, list[dict]] = {}
    for rec in records:
        episodes.setdefault((rec["run_id"], rec["episode"]), []).append(rec)
    problems = []
    for key, recs in sorted(episodes.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        recs = sorted(recs, key=lambda r: r["t"])
        env = make_env(recs[0]["task"], **(env_kwargs or {}))
        env.reset(recs[0]["reset_seed"])
        for rec in recs:
            if rec["t"] != env.t:
                problems.append(f"{key}: step index {rec['t']} != {env.t}")
                break
            res = env.step(rec["parsed_action"])
            if res.reward != rec["reward"] or res.done != rec["done"]:
                problems.append(f"{key} t={rec['t']}: got ({res.reward}, {res.done}) "
                                f"recorded ({rec['reward']}, {rec['done']})")
                break
    return problems
