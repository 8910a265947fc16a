"""On-policy training of the token policy: rollouts, GAE and clipped PPO.

Each collected transition stores the utterance sampled for an observation,
the action the parser extracted from it (or drew uniformly when it failed)
and the scaled log-probability ``lambda_cot * logp_tht + logp_act`` under
the sampling parameters. PPO ratios re-score the same tokens with the same
weighting.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .env_core import Env, Observation
from .features import featurize
from .gym_cards import make_env
from .optim import Adam, clip_by_global_norm
from .prompting import build_prompt, parse_action
from .token_policy import PolicyParams, TokenPolicy, backward, forward, pad_batch

METRIC_FIELDS = (
    "iter", "env_steps", "success_rate", "mean_return", "fallback_rate",
    "mean_abs_logp_tht", "mean_abs_logp_act", "lr", "policy_loss", "value_loss", "entropy",
)


class PPOAbort(FloatingPointError):
    """A minibatch produced a non-finite loss; the update was rolled back."""


@dataclass
class Transition:
    feats: np.ndarray
    ids: list[int]
    tht_range: range
    act_range: range
    parsed_action: str
    fallback: bool
    reward: float
    done: bool
    logp_tht: float
    logp_act: float
    logp_scaled_old: float
    value_old: float
    env_index: int = 0
    episode: int = 0
    t: int = 0
    reset_seed: int = 0
    obs_text: str = ""
    prompt: str = ""
    utterance_text: str = ""
    success: bool = False
    advantage: float = 0.0
    ret: float = 0.0


@dataclass
class RolloutBuffer:
    capacity: int
    transitions: list[Transition] = field(default_factory=list)
    bootstrap: dict[int, float] = field(default_factory=dict)
    episodes_started: int = 0

    def __len__(self) -> int:
        return len(self.transitions)

    def streams(self) -> dict[int, list[int]]:
        """Transition indices per environment, in collection order."""
        out: dict[int, list[int]] = {}
        for i, tr in enumerate(self.transitions):
            out.setdefault(tr.env_index, []).append(i)
        return out


def cosine_lr(step: int, lr_init: float, lr_final: float, max_steps: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    frac = min(step, max_steps) / max_steps
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + math.cos(math.pi * frac))


def compute_gae(rewards: Sequence[float], values: Sequence[float], dones: Sequence[bool],
                bootstrap_value: float, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns for one ordered stream.

    ``bootstrap_value`` is V of the observation after the last step and only
    matters when that step did not end its episode.
    """
    n = len(rewards)
    if not (len(values) == len(dones) == n):
        raise ValueError("rewards, values and dones must have equal lengths")
    adv = np.zeros(n)
    next_adv = 0.0
    next_v = bootstrap_value
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_v * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_v = values[t]
    return adv, adv + np.asarray(values, dtype=np.float64)


def collect_rollouts(envs: Env | Sequence[Env], policy: TokenPolicy, config: TrainConfig,
                     rng: np.random.Generator, episode_offset: int = 0) -> RolloutBuffer:
    """Fill a buffer with exactly ``config.buffer_size`` transitions.

    Every environment is reset at the start; the envs step in lockstep, each
    contributing ``buffer_size / len(envs)`` transitions. Episodes still
    running at the end are cut and later bootstrapped.
    """
    envs = [envs] if isinstance(envs, Env) else list(envs)
    n = len(envs)
    if config.buffer_size % n:
        raise ValueError("number of envs must divide buffer_size")
    buf = RolloutBuffer(config.buffer_size)
    episode_ids = [0] * n
    seeds = [0] * n
    obs: list[Observation] = [None] * n  # type: ignore[list-item]

    def start(i: int) -> None:
        seeds[i] = int(rng.integers(2**63))
        obs[i] = envs[i].reset(seeds[i])
        episode_ids[i] = episode_offset + buf.episodes_started
        buf.episodes_started += 1

    for i in range(n):
        start(i)
    last_done = [False] * n
    for _ in range(config.buffer_size // n):
        feats = np.stack([featurize(o) for o in obs])
        values = policy.value(feats)
        utts = policy.sample(feats, rng, config.temperature, config.max_tokens)
        for i, env in enumerate(envs):
            o, u = obs[i], utts[i]
            action, fb = parse_action(u.text, o.legal_actions, env.fallback_rng)
            res = env.step(action)
            buf.transitions.append(Transition(
                feats=feats[i], ids=u.ids, tht_range=u.tht_range, act_range=u.act_range,
                parsed_action=action, fallback=fb, reward=res.reward, done=res.done,
                logp_tht=u.logp_tht, logp_act=u.logp_act,
                logp_scaled_old=u.scaled_logp(config.lambda_cot), value_old=float(values[i]),
                env_index=i, episode=episode_ids[i], t=o.step_index, reset_seed=seeds[i],
                obs_text=o.text_render, prompt=build_prompt(o, config.cot), utterance_text=u.text,
                success=bool(res.done and res.info.get("success", False)),
            ))
            last_done[i] = res.done
            if res.done:
                start(i)
            else:
                obs[i] = res.observation
    tail = policy.value(np.stack([featurize(o) for o in obs]))
    buf.bootstrap = {i: (0.0 if last_done[i] else float(tail[i])) for i in range(n)}
    return buf


def assign_advantages(buf: RolloutBuffer, gamma: float, lam: float, normalize: bool = True) -> None:
    for env_index, idx in buf.streams().items():
        trs = [buf.transitions[i] for i in idx]
        adv, ret = compute_gae([t.reward for t in trs], [t.value_old for t in trs], [t.done for t in trs],
                               buf.bootstrap.get(env_index, 0.0), gamma, lam)
        for tr, a, r in zip(trs, adv, ret):
            tr.advantage, tr.ret = float(a), float(r)
    if normalize and len(buf) > 1:
        a = np.array([t.advantage for t in buf.transitions])
        a = (a - a.mean()) / (a.std() + 1e-8)
        for tr, v in zip(buf.transitions, a):
            tr.advantage = float(v)


def clipped_objective(ratio: np.ndarray, adv: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-item ``min(ratio*A, clip(ratio)*A)`` and whether the unclipped term is the minimum."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    return np.minimum(unclipped, clipped), unclipped <= clipped


def _segment_weights(trs: Sequence[Transition], L: int, lam: float) -> np.ndarray:
    w = np.zeros((len(trs), L))
    for r, tr in enumerate(trs):
        w[r, tr.tht_range.start:tr.tht_range.stop] = lam
        w[r, tr.act_range.start:tr.act_range.stop] = 1.0
    return w


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    ratios_first: np.ndarray
    grad_norm: float
    minibatches: int


def ppo_update(policy: TokenPolicy, buf: RolloutBuffer, config: TrainConfig, optimizer: Adam, lr: float,
               rng: np.random.Generator, probe: Callable[[dict], None] | None = None) -> UpdateStats:
    """Clipped-PPO epochs over shuffled minibatches, one optimizer step each.

    Raises PPOAbort (parameters and optimizer restored) on a non-finite loss.
    ``probe`` receives per-minibatch internals for instrumentation.
    """
    params = policy.params
    snapshot = params.copy()
    opt_state = (optimizer.t, {k: v.copy() for k, v in optimizer.m.items()},
                 {k: v.copy() for k, v in optimizer.v.items()})
    trs = buf.transitions
    M = config.minibatch_size
    pl, vl, ent, norms = [], [], [], []
    ratios_first = np.array([])
    for epoch in range(config.ppo_epochs):
        order = rng.permutation(len(trs))
        for s in range(0, len(order), M):
            mb = [trs[i] for i in order[s:s + M]]
            ids, lengths = pad_batch([t.ids for t in mb])
            feats = np.stack([t.feats for t in mb])
            cache = forward(params, feats, ids, lengths, policy.logit_bias)
            seg = _segment_weights(mb, ids.shape[1], config.lambda_cot)
            new = (seg * cache.token_logp).sum(axis=1)
            old = np.array([t.logp_scaled_old for t in mb])
            ratio = np.exp(new - old)
            adv = np.array([t.advantage for t in mb])
            rets = np.array([t.ret for t in mb])
            obj, active = clipped_objective(ratio, adv, config.clip_eps)
            n_tok = float(lengths.sum())
            mean_ent = float(cache.entropy.sum() / n_tok)
            v_loss = float(np.mean((cache.value - rets) ** 2))
            loss = -float(obj.mean()) + config.value_coef * v_loss - config.entropy_coef * mean_ent
            if epoch == 0 and s == 0:
                ratios_first = ratio.copy()
            if probe is not None:
                probe({"epoch": epoch, "ratio": ratio, "adv": adv, "objective": obj, "active": active})
            if not np.isfinite(loss):
                params.arrays = snapshot.arrays
                optimizer.t, optimizer.m, optimizer.v = opt_state
                raise PPOAbort(f"non-finite PPO loss in epoch {epoch}, minibatch {s // M}")
            item_w = np.where(active, ratio * adv, 0.0) / len(mb)
            _, grads = backward(params, cache, seg * item_w[:, None],
                                config.entropy_coef / n_tok, config.value_coef / len(mb), rets)
            grads = {k: -g for k, g in grads.items()}
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                params.arrays = snapshot.arrays
                optimizer.t, optimizer.m, optimizer.v = opt_state
                raise PPOAbort(f"non-finite gradient in epoch {epoch}, minibatch {s // M}")
            grads, norm = clip_by_global_norm(grads, config.max_grad_norm)
            optimizer.step(params.arrays, grads, lr)
            pl.append(-float(obj.mean()))
            vl.append(v_loss)
            ent.append(mean_ent)
            norms.append(norm)
    return UpdateStats(float(np.mean(pl)), float(np.mean(vl)), float(np.mean(ent)), ratios_first,
                       float(np.mean(norms)), len(pl))


def format_metric(value: float | int | str) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def metrics_csv(rows: Sequence[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for row in rows:
        w.writerow([format_metric(row[k]) for k in METRIC_FIELDS])
    return out.getvalue()


@dataclass
class TrainResult:
    policy: TokenPolicy
    metrics: list[dict]
    peak_success: float
    peak_iter: int
    final_success: float
    trajectories: list[dict]
    evals: list[dict]
    aborted: str | None = None
    best_params: PolicyParams | None = None  # parameters at the peak evaluation

    def best_policy(self) -> TokenPolicy:
        """The policy as it was at the peak evaluation (the final policy if there was none)."""
        if self.best_params is None:
            return self.policy
        return TokenPolicy(self.best_params.copy(), self.policy.vocab, self.policy.logit_bias)


def transition_record(run_id: str, tr: Transition, task: str) -> dict:
    return {
        "run_id": run_id,
        "episode": tr.episode,
        "t": tr.t,
        "task": task,
        "reset_seed": tr.reset_seed,
        "obs_text": tr.obs_text,
        "prompt": tr.prompt,
        "utterance_text": tr.utterance_text,
        "parsed_action": tr.parsed_action,
        "fallback": tr.fallback,
        "reward": tr.reward,
        "done": tr.done,
        "logp_tht": tr.logp_tht,
        "logp_act": tr.logp_act,
        "logp_scaled": tr.logp_scaled_old,
        "value_pred": tr.value_old,
    }


def train(policy: TokenPolicy, config: TrainConfig, run_id: str = "run",
          on_iteration: Callable[[dict], None] | None = None) -> TrainResult:
    """Alternate collection, advantage estimation and PPO for ``config.iterations`` iterations.

    Row 0 of the metrics evaluates the starting policy; the peak success is
    taken over the rows after at least one update. ``policy`` is updated in
    place.
    """
    from .harness.evaluate import evaluate

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7A11]))
    envs = [make_env(config.task, **config.env_kwargs()) for _ in range(config.n_envs)]
    optimizer = Adam(policy.params.arrays, eps=config.adam_eps)

    def run_eval() -> dict:
        res = evaluate(config.task, policy, config.eval_episodes, greedy=True, seed=config.seed,
                       env_kwargs=config.env_kwargs(), max_tokens=config.max_tokens, cot=config.cot)
        return res.summary()

    nan = float("nan")
    ev = run_eval()
    rows = [{
        "iter": 0, "env_steps": 0, "success_rate": ev["success_rate"], "mean_return": ev["mean_return"],
        "fallback_rate": ev["fallback_rate"], "mean_abs_logp_tht": nan, "mean_abs_logp_act": nan,
        "lr": cosine_lr(0, config.lr_init, config.lr_final, config.lr_max_steps),
        "policy_loss": nan, "value_loss": nan, "entropy": nan,
    }]
    evals = [dict(ev, iter=0)]
    if on_iteration:
        on_iteration(rows[-1])
    trajectories: list[dict] = []
    episodes = 0
    peak, peak_iter = -1.0, 0
    best_params = None
    aborted = None
    for k in range(config.iterations):
        buf = collect_rollouts(envs, policy, config, rng, episode_offset=episodes)
        episodes += buf.episodes_started
        if config.log_trajectories:
            trajectories += [transition_record(run_id, tr, config.task) for tr in buf.transitions]
        assign_advantages(buf, config.gamma, config.lambda_gae, config.normalize_advantages)
        lr = cosine_lr(k, config.lr_init, config.lr_final, config.lr_max_steps)
        try:
            stats = ppo_update(policy, buf, config, optimizer, lr, rng)
        except PPOAbort as exc:
            aborted = str(exc)
            break
        row = {
            "iter": k + 1,
            "env_steps": (k + 1) * config.buffer_size,
            "fallback_rate": float(np.mean([t.fallback for t in buf.transitions])),
            "mean_abs_logp_tht": float(np.mean([abs(t.logp_tht) for t in buf.transitions])),
            "mean_abs_logp_act": float(np.mean([abs(t.logp_act) for t in buf.transitions])),
            "lr": lr,
            "policy_loss": stats.policy_loss,
            "value_loss": stats.value_loss,
            "entropy": stats.entropy,
        }
        if (k + 1) % config.eval_every == 0 or k + 1 == config.iterations:
            ev = run_eval()
            evals.append(dict(ev, iter=k + 1))
            row["success_rate"], row["mean_return"] = ev["success_rate"], ev["mean_return"]
            if ev["success_rate"] > peak:
                peak, peak_iter = ev["success_rate"], k + 1
                best_params = policy.params.copy()
        else:
            row["success_rate"] = row["mean_return"] = nan
        rows.append(row)
        if on_iteration:
            on_iteration(row)
        if config.early_stop_success is not None and peak >= config.early_stop_success:
            break
    final = evals[-1]["success_rate"]
    return TrainResult(policy, rows, max(peak, 0.0) if peak >= 0 else float("nan"), peak_iter, final,
                       trajectories, evals, aborted, best_params)
