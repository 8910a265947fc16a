"""Greedy evaluation of a policy over a fixed set of seeded episodes."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from ..env_core import Env, Observation
from ..features import featurize
from ..gym_cards import make_env
from ..oracles import expert_action
from ..prompting import build_prompt, parse_action
from ..sft import render_response
from ..token_policy import TokenPolicy

TextAgent = Callable[[Sequence[Observation]], list[str]]

DEFAULT_EPISODES = {"numberline": 200, "ezpoints": 200, "points24": 200, "blackjack": 1000}


@dataclass
class EvalResult:
    episodes: int
    success_rate: float
    mean_return: float
    fallback_rate: float
    steps: int
    records: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "mean_return": self.mean_return,
            "fallback_rate": self.fallback_rate,
            "steps": self.steps,
        }


def oracle_agent(cot: bool = True) -> TextAgent:
    """Text agent that answers with the oracle's response (uniform text when the oracle has none)."""

    def act(observations: Sequence[Observation]) -> list[str]:
        out = []
        for obs in observations:
            a = expert_action(obs)
            out.append(render_response(obs, a, cot) if a is not None else "{}")
        return out

    return act


def fixed_agent(action: str) -> TextAgent:
    def act(observations: Sequence[Observation]) -> list[str]:
        return [f'{{\n"action": "{action}"\n}}' for _ in observations]

    return act


def episode_seeds(seed: int, episodes: int) -> list[int]:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE7A1]))
    return [int(s) for s in rng.integers(2**63, size=episodes)]


def evaluate(
    task: str,
    agent: TokenPolicy | TextAgent,
    episodes: int | None = None,
    greedy: bool = True,
    seed: int = 0,
    env_kwargs: dict | None = None,
    max_tokens: int = 128,
    temperature: float = 1.0,
    cot: bool = True,
    lambda_cot: float = 0.5,
    record: bool = False,
    run_id: str = "",
) -> EvalResult:
    """Run ``episodes`` episodes in lockstep and report success, return and fallback rate.

    Episode seeds depend only on ``seed``, so every call sees the same deals.
    Success is read from the environment's terminal ``info["success"]``.
    """
    episodes = DEFAULT_EPISODES[task] if episodes is None else episodes
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = episode_seeds(seed, episodes)
    envs: list[Env] = [make_env(task, **(env_kwargs or {})) for _ in range(episodes)]
    obs = [env.reset(s) for env, s in zip(envs, seeds)]
    active = list(range(episodes))
    returns = np.zeros(episodes)
    success = np.zeros(episodes, dtype=bool)
    n_steps = n_fallback = 0
    records: list[dict] = []
    sample_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5A3F]))
    while active:
        cur = [obs[i] for i in active]
        if isinstance(agent, TokenPolicy):
            feats = np.stack([featurize(o) for o in cur])
            utts = agent.sample(feats, sample_rng, temperature, max_tokens, greedy=greedy)
            texts = [u.text for u in utts]
            values = agent.value(feats) if record else None
        else:
            utts, values = None, None
            texts = agent(cur)
        still = []
        for j, i in enumerate(active):
            env = envs[i]
            action, fb = parse_action(texts[j], cur[j].legal_actions, env.fallback_rng)
            res = env.step(action)
            n_steps += 1
            n_fallback += int(fb)
            returns[i] += res.reward
            if record:
                u = utts[j] if utts is not None else None
                records.append({
                    "run_id": run_id,
                    "episode": i,
                    "t": cur[j].step_index,
                    "task": task,
                    "reset_seed": seeds[i],
                    "obs_text": cur[j].text_render,
                    "prompt": build_prompt(cur[j], cot),
                    "utterance_text": texts[j],
                    "parsed_action": action,
                    "fallback": fb,
                    "reward": res.reward,
                    "done": res.done,
                    "logp_tht": u.logp_tht if u else 0.0,
                    "logp_act": u.logp_act if u else 0.0,
                    "logp_scaled": u.scaled_logp(lambda_cot) if u else 0.0,
                    "value_pred": float(values[j]) if values is not None else 0.0,
                })
            if res.done:
                success[i] = bool(res.info.get("success", False))
            else:
                obs[i] = res.observation
                still.append(i)
        active = still
    return EvalResult(
        episodes=episodes,
        success_rate=float(success.mean()),
        mean_return=float(returns.mean()),
        fallback_rate=n_fallback / max(n_steps, 1),
        steps=n_steps,
        records=records,
    )
