import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gymcards_rl.features import feature_dim, featurize
from gymcards_rl.gym_cards import TASKS, make_env
from gymcards_rl.token_policy import (
    PARAM_NAMES, PolicyParams, TokenPolicy, backward, forward, load_checkpoint, make_utterance, pad_batch,
    policy_gradient, range_weights, save_checkpoint, scaled_action_logprob, value,
)
from gymcards_rl.vocab import Vocabulary, build_vocabulary


def small_policy(seed=0, V=9, k=5, d=6, h=4, noise=0.3):
    rng = np.random.default_rng(seed)
    prm = PolicyParams.init(V, k, rng, d, h)
    for a in prm.arrays.values():
        a += rng.normal(0, noise, a.shape)
    vocab = Vocabulary([f"t{i}" for i in range(V - 2)])
    return TokenPolicy(prm, vocab), rng


def numeric_grad(prm, f, eps=1e-5):
    out = {}
    for name in PARAM_NAMES:
        a = prm.arrays[name]
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + eps
            fp = f()
            a[idx] = old - eps
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * eps)
        out[name] = g
    return out


def assert_grads_close(analytic, numeric, tol=1e-4):
    for name in PARAM_NAMES:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-6)
        assert np.all(np.abs(a - n) / denom < tol), name


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_objective_gradient_check(seed):
    policy, rng = small_policy(seed)
    prm = policy.params
    feats = rng.normal(size=(3, 5))
    ids, lengths = pad_batch([list(rng.integers(0, 9, size=n)) for n in (4, 6, 2)])
    tw = rng.normal(size=ids.shape)
    ew = rng.normal(size=ids.shape) * 0.3
    vw, vt = rng.random(3), rng.normal(size=3)

    def f():
        return backward(prm, forward(prm, feats, ids, lengths), tw, ew, vw, vt)[0]

    _, g = backward(prm, forward(prm, feats, ids, lengths), tw, ew, vw, vt)
    assert_grads_close(g, numeric_grad(prm, f))


def test_policy_gradient_matches_scaled_objective():
    policy, rng = small_policy(4)
    prm = policy.params
    feats = rng.normal(size=5)
    ids = [3, 4, 5, 2, 6, 1]
    tht, act, lam = range(0, 4), range(4, 5), 0.37

    def f():
        lp = TokenPolicy(prm, policy.vocab).score(feats, ids)
        v = value(prm, feats)[0]
        return 0.8 * (lam * lp[:4].sum() + lp[4]) - 0.6 * (v - 0.25) ** 2

    g = policy_gradient(prm, feats, ids, tht, act, 0.8, lam, 0.25, 0.6)
    assert_grads_close(g, numeric_grad(prm, f))


def test_zero_weights_zero_gradient():
    policy, rng = small_policy(1)
    feats = rng.normal(size=5)
    target = float(value(policy.params, feats)[0])
    g = policy_gradient(policy.params, feats, [2, 3, 4], range(0, 2), range(2, 3), 0.0, 0.5, target, 1.0)
    assert all(np.all(v == 0) for v in g.values())


def test_lambda_zero_drops_thought_terms():
    policy, rng = small_policy(2)
    prm = policy.params
    feats = rng.normal(size=5)
    # thought tokens 2..4, action token 5, trailing tokens 6..8 that are only fed after the action
    ids = [2, 3, 4, 5, 6, 7, 8]
    tht, act = range(0, 3), range(3, 4)
    g0 = policy_gradient(prm, feats, ids, tht, act, 1.0, 0.0, 0.0, 0.0)
    arr, lengths = pad_batch([ids])
    cache = forward(prm, feats[None], arr, lengths)
    w_act = np.zeros((1, len(ids)))
    w_act[0, 3] = 1.0
    _, g_act = backward(prm, cache, w_act)
    w_tht = np.zeros((1, len(ids)))
    w_tht[0, 0:3] = 1.0
    _, g_tht = backward(prm, cache, w_tht)
    for k in PARAM_NAMES:
        np.testing.assert_allclose(g0[k], g_act[k], atol=1e-14)
    assert np.all(g0["E"][6:] == 0)  # rows only used after the scored steps
    g_half = policy_gradient(prm, feats, ids, tht, act, 1.0, 0.5, 0.0, 0.0)
    for k in PARAM_NAMES:
        np.testing.assert_allclose(g_half[k], g_act[k] + 0.5 * g_tht[k], atol=1e-12)
    assert np.abs(g_tht["E"]).sum() > 0


def test_scaled_action_logprob_examples():
    assert scaled_action_logprob(-9.0, -0.1, 0.0) == -0.1
    assert scaled_action_logprob(-9.0, -0.1, 1.0) == pytest.approx(-9.1, abs=1e-15)
    assert scaled_action_logprob(-2.2, 0.0, 0.5) == pytest.approx(-1.1, abs=1e-15)
    with pytest.raises(ValueError):
        scaled_action_logprob(-1.0, -1.0, 1.5)
    np.testing.assert_array_equal(range_weights(5, range(0, 2), range(3, 4), 0.5), [0.5, 0.5, 0, 1, 0])


def test_sampling_determinism_and_greedy_limit():
    policy, rng = small_policy(3, noise=1.0)
    feats = rng.normal(size=(6, 5))
    a = policy.sample(feats, np.random.default_rng(9), 1.0, 12)
    b = policy.sample(feats, np.random.default_rng(9), 1.0, 12)
    assert [u.ids for u in a] == [u.ids for u in b]
    greedy = policy.sample(feats, np.random.default_rng(0), max_tokens=12, greedy=True)
    cold = policy.sample(feats, np.random.default_rng(1), 1e-8, 12)
    assert [u.ids for u in greedy] == [u.ids for u in cold]
    for u in a:
        assert len(u.ids) <= 12
        assert u.truncated == (u.ids[-1] != policy.vocab.eos)


def test_normalization_and_scoring_identities():
    policy, rng = small_policy(5, noise=1.0)
    feats = rng.normal(size=(4, 5))
    utts = policy.sample(feats, np.random.default_rng(3), 1.0, 10)
    for f, u in zip(feats, utts):
        lp = policy.score(f, u.ids)
        np.testing.assert_allclose(lp, u.token_logps, atol=1e-10)
        # chain rule: every prefix re-scored separately gives the same conditional
        for i in range(len(u.ids)):
            assert policy.score(f, u.ids[: i + 1])[-1] == pytest.approx(lp[i], abs=1e-12)
    ids, lengths = pad_batch([u.ids for u in utts])
    cache = forward(policy.params, feats, ids, lengths)
    np.testing.assert_allclose(np.exp(cache.logp_all).sum(axis=-1), 1.0, atol=1e-12)
    total = sum(np.exp(policy.score(feats[0], [t])[0]) for t in range(len(policy.vocab)))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_lambda_does_not_change_action_ranking():
    policy, rng = small_policy(6, noise=1.0)
    feats = rng.normal(size=5)
    prefix = [3, 4, 2]
    cands = range(len(policy.vocab))
    tht_lp = policy.score(feats, prefix).sum()
    act_lp = {c: policy.score(feats, prefix + [c])[-1] for c in cands}
    rankings = []
    for lam in (0.0, 0.2, 0.5, 1.0):
        scores = {c: scaled_action_logprob(tht_lp, act_lp[c], lam) for c in cands}
        rankings.append(sorted(cands, key=lambda c: (-scores[c], c)))
    assert all(r == rankings[0] for r in rankings)


def test_first_token_frequencies_match_probabilities():
    policy, rng = small_policy(7, noise=0.8)
    feats = rng.normal(size=5)
    n = 100_000
    probs = np.exp([policy.score(feats, [t])[0] for t in range(len(policy.vocab))])
    draws = policy.sample(np.repeat(feats[None], n, axis=0), np.random.default_rng(1), 1.0, 1)
    counts = np.bincount([u.ids[0] for u in draws], minlength=len(policy.vocab))
    sigma = np.sqrt(n * probs * (1 - probs))
    assert np.all(np.abs(counts - n * probs) <= 4 * sigma + 1e-9)


def test_score_rejects_unknown_ids():
    policy, _ = small_policy()
    with pytest.raises(ValueError):
        policy.score(np.zeros(5), [0, 99])


def test_value_head_deterministic_and_finite():
    policy, rng = small_policy(8)
    feats = rng.normal(size=(7, 5))
    v1, v2 = value(policy.params, feats), value(policy.params, feats)
    assert np.array_equal(v1, v2) and np.all(np.isfinite(v1)) and v1.shape == (7,)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(1, 9), st.integers(1, 12), st.integers(1, 12))
def test_parameter_count_fixed_by_dims(V, k, d, h):
    prm = PolicyParams.init(V, k, np.random.default_rng(0), d, h)
    expected = V * d + k * d + d + 2 * d * d + d * d + d + d * V + V + k * h + h + h * h + h + h + 1
    assert prm.num_parameters() == expected and prm.all_finite()


def test_checkpoint_round_trip(tmp_path):
    vocab = build_vocabulary("numberline")
    prm = PolicyParams.init(len(vocab), feature_dim("numberline"), np.random.default_rng(0), 8, 8)
    policy = TokenPolicy(prm, vocab)
    path = save_checkpoint(policy, tmp_path / "p.bin", extra={"note": "x"})
    back = load_checkpoint(path)
    assert back.params.equal(prm) and back.vocab.tokens == vocab.tokens
    assert back.params.arrays["E"].dtype == np.float64
    with pytest.raises(ValueError):
        load_checkpoint(path, vocab=build_vocabulary("blackjack"))
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.bin")


def test_constrained_decoding_stays_in_allowed_set():
    vocab = build_vocabulary("numberline")
    env = make_env("numberline")
    prm = PolicyParams.init(len(vocab), feature_dim("numberline"), np.random.default_rng(0), 8, 8)
    policy = TokenPolicy(prm, vocab)
    allowed = ["{", "\n", '"', "action", ":", " \"", "+", "-", "}"]
    policy.set_constrained(allowed)
    feats = np.stack([featurize(env.reset(s)) for s in range(20)])
    for u in policy.sample(feats, np.random.default_rng(0), 1.0, 30):
        assert set(u.tokens) <= set(allowed)
    policy.set_constrained(None)
    assert policy.logit_bias is None


def test_make_utterance_segments():
    vocab = build_vocabulary("blackjack")
    ids = vocab.encode('{\n"thoughts": "I think I should hit.",\n"action": "hit"\n}') + [vocab.eos]
    u = make_utterance(vocab, ids, np.full(len(ids), -0.5))
    assert [u.tokens[i] for i in u.act_range] == ["hit"]
    assert u.text.endswith("}") and u.logp_act == -0.5
    assert u.logp_tht == pytest.approx(-0.5 * len(u.tht_range))


@pytest.mark.parametrize("task", TASKS)
def test_features_fixed_length(task):
    env = make_env(task)
    dims = set()
    for s in range(30):
        obs = env.reset(s)
        dims.add(featurize(obs).shape)
        while not env.done:
            res = env.step(env.action_space[s % len(env.action_space)])
            dims.add(featurize(res.observation).shape)
    assert dims == {(feature_dim(task),)}
