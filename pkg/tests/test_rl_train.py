import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gymcards_rl.config import preset
from gymcards_rl.gym_cards import make_env
from gymcards_rl.harness.evaluate import evaluate
from gymcards_rl.optim import Adam
from gymcards_rl.pipeline import new_policy
from gymcards_rl.rl_train import (
    METRIC_FIELDS, PPOAbort, RolloutBuffer, Transition, assign_advantages, clipped_objective, collect_rollouts,
    compute_gae, cosine_lr, metrics_csv, ppo_update, train,
)
from gymcards_rl.token_policy import forward, pad_batch

from .test_token_policy import assert_grads_close, numeric_grad


def tiny_config(task="numberline", **kw):
    base = dict(d_model=12, value_hidden=8, buffer_size=32, minibatch_size=16, n_envs=4, max_tokens=40,
                eval_episodes=10, total_env_steps=64, log_trajectories=True)
    base.update(kw)
    return preset(task).replace(**base)


def envs_for(cfg):
    return [make_env(cfg.task, **cfg.env_kwargs()) for _ in range(cfg.n_envs)]


# --------------------------------------------------------------------------
# Learning rate and advantages


def test_cosine_lr_examples():
    assert cosine_lr(0, 1.0, 0.1, 10) == 1.0
    assert cosine_lr(10, 1.0, 0.1, 10) == pytest.approx(0.1, abs=1e-15)
    assert cosine_lr(5, 1.0, 0.1, 10) == pytest.approx(0.55, abs=1e-15)
    assert cosine_lr(50, 1.0, 0.1, 10) == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(ValueError):
        cosine_lr(-1, 1.0, 0.1, 10)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 100), st.integers(0, 200))
def test_cosine_lr_non_increasing(a, b, max_steps, step):
    hi, lo = max(a, b), min(a, b)
    assert cosine_lr(step + 1, hi, lo, max_steps) <= cosine_lr(step, hi, lo, max_steps) + 1e-15


def test_gae_examples():
    adv, ret = compute_gae([1.0], [0.0], [True], 0.0, 1.0, 1.0)
    assert adv.tolist() == [1.0] and ret.tolist() == [1.0]
    adv, _ = compute_gae([0.0, 1.0], [0.5, 0.5], [False, True], 0.0, 1.0, 0.0)
    assert adv.tolist() == [0.0, 0.5]
    # cut episode bootstraps from the value after the last step
    adv, _ = compute_gae([0.0], [0.2], [False], 0.7, 0.9, 0.95)
    assert adv[0] == pytest.approx(0.9 * 0.7 - 0.2)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gae_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 13))
    r, v = rng.normal(size=n), rng.normal(size=n)
    dones = [False] * (n - 1) + [True]
    adv, ret = compute_gae(r, v, dones, 123.0, 1.0, 1.0)
    brute = np.array([r[t:].sum() - v[t] for t in range(n)])
    np.testing.assert_allclose(adv, brute, atol=1e-10)
    np.testing.assert_allclose(ret, adv + v, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 1.0), st.floats(0.0, 1.0))
def test_gae_resets_at_episode_boundaries(seed, gamma, lam):
    rng = np.random.default_rng(seed)
    a_len, b_len = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    r, v = rng.normal(size=a_len + b_len), rng.normal(size=a_len + b_len)
    dones = [False] * (a_len - 1) + [True] + [False] * (b_len - 1) + [True]
    joint, _ = compute_gae(r, v, dones, 0.0, gamma, lam)
    first, _ = compute_gae(r[:a_len], v[:a_len], dones[:a_len], 0.0, gamma, lam)
    second, _ = compute_gae(r[a_len:], v[a_len:], dones[a_len:], 0.0, gamma, lam)
    np.testing.assert_allclose(joint, np.concatenate([first, second]), atol=1e-12)


def test_clip_examples():
    obj, _ = clipped_objective(np.array([1.5, 0.5, 1.0]), np.array([1.0, -1.0, 2.0]), 0.2)
    assert obj.tolist() == [1.2, -0.8, 2.0]


@given(st.floats(0.01, 5), st.floats(-5, 5), st.floats(0.05, 0.5))
def test_clip_formula(ratio, adv, eps):
    obj, active = clipped_objective(np.array([ratio]), np.array([adv]), eps)
    expected = min(ratio * adv, min(max(ratio, 1 - eps), 1 + eps) * adv)
    assert obj[0] == expected
    assert active[0] == (ratio * adv <= min(max(ratio, 1 - eps), 1 + eps) * adv)


# --------------------------------------------------------------------------
# Collection and updates


def test_collect_rollouts_contract():
    cfg = tiny_config()
    policy = new_policy(cfg)
    buf = collect_rollouts(envs_for(cfg), policy, cfg, np.random.default_rng(0))
    assert len(buf) == cfg.buffer_size
    space = make_env("numberline").action_space
    assert all(t.parsed_action in space for t in buf.transitions)
    assert set(buf.bootstrap) == set(range(cfg.n_envs))
    again = collect_rollouts(envs_for(cfg), policy, cfg, np.random.default_rng(0))
    key = [(t.ids, t.parsed_action, t.reward, t.done, t.logp_scaled_old) for t in buf.transitions]
    assert key == [(t.ids, t.parsed_action, t.reward, t.done, t.logp_scaled_old) for t in again.transitions]


def test_collect_rejects_bad_env_count():
    cfg = tiny_config()
    with pytest.raises(ValueError):
        collect_rollouts([make_env("numberline")] * 3, new_policy(cfg), cfg, np.random.default_rng(0))


def test_rescored_logprobs_match_stored():
    cfg = tiny_config(lambda_cot=0.3)
    policy = new_policy(cfg)
    buf = collect_rollouts(envs_for(cfg), policy, cfg, np.random.default_rng(1))
    trs = buf.transitions
    ids, lengths = pad_batch([t.ids for t in trs])
    cache = forward(policy.params, np.stack([t.feats for t in trs]), ids, lengths)
    for r, t in enumerate(trs):
        lp = cache.token_logp[r]
        new = 0.3 * lp[t.tht_range.start:t.tht_range.stop].sum() + lp[t.act_range.start:t.act_range.stop].sum()
        assert abs(new - t.logp_scaled_old) < 1e-8


def test_advantage_normalization():
    cfg = tiny_config()
    buf = collect_rollouts(envs_for(cfg), new_policy(cfg), cfg, np.random.default_rng(2))
    for i, t in enumerate(buf.transitions):
        t.reward = float(i % 5)  # make sure advantages are not constant
    assign_advantages(buf, cfg.gamma, cfg.lambda_gae, True)
    a = np.array([t.advantage for t in buf.transitions])
    assert abs(a.mean()) < 1e-9 and abs(a.std() - 1) < 1e-6


def test_first_ratios_are_one_and_clip_terms_exact():
    cfg = tiny_config(ppo_epochs=2)
    policy = new_policy(cfg)
    buf = collect_rollouts(envs_for(cfg), policy, cfg, np.random.default_rng(3))
    assign_advantages(buf, cfg.gamma, cfg.lambda_gae)
    seen = []

    def probe(info):
        ratio, adv = info["ratio"], info["adv"]
        clipped = np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv
        assert np.array_equal(info["objective"], np.minimum(ratio * adv, clipped))
        seen.append(info["epoch"])

    stats = ppo_update(policy, buf, cfg, Adam(policy.params.arrays), 1e-2, np.random.default_rng(0), probe)
    assert np.all(np.abs(stats.ratios_first - 1.0) < 1e-8)
    assert stats.minibatches == cfg.ppo_epochs * cfg.buffer_size // cfg.minibatch_size == len(seen)


class RecordingOptimizer(Adam):
    def step(self, params, grads, lr):
        self.grads = {k: g.copy() for k, g in grads.items()}


def test_ppo_gradient_matches_loss():
    """The gradient handed to the optimizer is the derivative of the PPO minibatch loss."""
    cfg = tiny_config(d_model=4, value_hidden=3, buffer_size=8, minibatch_size=8, n_envs=2, ppo_epochs=1,
                      max_tokens=6, max_grad_norm=1e9, lambda_cot=0.4)
    policy = new_policy(cfg)
    buf = collect_rollouts(envs_for(cfg), policy, cfg, np.random.default_rng(4))
    assign_advantages(buf, cfg.gamma, cfg.lambda_gae)
    rng = np.random.default_rng(5)
    for t in buf.transitions:
        t.logp_scaled_old += rng.normal(0, 0.3)  # move ratios off 1 so both clip branches occur
    opt = RecordingOptimizer(policy.params.arrays)
    ppo_update(policy, buf, cfg, opt, 1e-3, np.random.default_rng(0))
    trs = buf.transitions
    ids, lengths = pad_batch([t.ids for t in trs])
    feats = np.stack([t.feats for t in trs])
    seg = np.zeros(ids.shape)
    for r, t in enumerate(trs):
        seg[r, t.tht_range.start:t.tht_range.stop] = cfg.lambda_cot
        seg[r, t.act_range.start:t.act_range.stop] = 1.0
    old = np.array([t.logp_scaled_old for t in trs])
    adv = np.array([t.advantage for t in trs])
    ret = np.array([t.ret for t in trs])

    def loss():
        c = forward(policy.params, feats, ids, lengths)
        ratio = np.exp((seg * c.token_logp).sum(axis=1) - old)
        obj, _ = clipped_objective(ratio, adv, cfg.clip_eps)
        ent = c.entropy.sum() / lengths.sum()
        return -obj.mean() + cfg.value_coef * np.mean((c.value - ret) ** 2) - cfg.entropy_coef * ent

    assert_grads_close(opt.grads, numeric_grad(policy.params, loss), tol=1e-4)


def test_non_finite_loss_rolls_back():
    cfg = tiny_config()
    policy = new_policy(cfg)
    buf = collect_rollouts(envs_for(cfg), policy, cfg, np.random.default_rng(6))
    assign_advantages(buf, cfg.gamma, cfg.lambda_gae)
    buf.transitions[5].advantage = float("nan")
    before = policy.params.copy()
    opt = Adam(policy.params.arrays)
    with pytest.raises(PPOAbort):
        ppo_update(policy, buf, cfg, opt, 1e-2, np.random.default_rng(0))
    assert policy.params.equal(before) and opt.t == 0


def test_zero_lr_training_leaves_params_bitwise_equal():
    cfg = tiny_config(lr_init=0.0, lr_final=0.0)
    policy = new_policy(cfg)
    before = policy.params.copy()
    res = train(policy, cfg)
    assert res.policy.params.equal(before)
    assert len(res.metrics) == cfg.iterations + 1


def test_metrics_rows_and_csv():
    cfg = tiny_config()
    res = train(new_policy(cfg), cfg)
    text = metrics_csv(res.metrics)
    lines = text.splitlines()
    assert lines[0] == ",".join(METRIC_FIELDS)
    assert len(lines) == cfg.iterations + 2
    last = res.metrics[-1]
    assert last["env_steps"] == cfg.iterations * cfg.buffer_size
    assert 0 <= last["fallback_rate"] <= 1 and last["mean_abs_logp_tht"] >= 0
    assert len(res.trajectories) == cfg.iterations * cfg.buffer_size


def test_early_stop():
    cfg = tiny_config(total_env_steps=320, early_stop_success=0.0)
    res = train(new_policy(cfg), cfg)
    assert len(res.metrics) == 2 and res.peak_iter == 1


def test_buffer_streams():
    buf = RolloutBuffer(4)
    for i, e in enumerate([0, 1, 0, 1]):
        buf.transitions.append(Transition(np.zeros(1), [], range(0), range(0), "+", False, 0.0, False,
                                          0.0, 0.0, 0.0, 0.0, env_index=e))
    assert buf.streams() == {0: [0, 2], 1: [1, 3]}



def test_best_policy_is_the_peak_snapshot():
    cfg = tiny_config(total_env_steps=128)
    res = train(new_policy(cfg), cfg)
    best = res.best_policy()
    again = evaluate(cfg.task, best, cfg.eval_episodes, greedy=True, seed=cfg.seed, env_kwargs=cfg.env_kwargs(),
                     max_tokens=cfg.max_tokens, cot=cfg.cot)
    assert again.success_rate == res.peak_success
    assert best.params is not res.policy.params
