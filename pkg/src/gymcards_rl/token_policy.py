"""A small autoregressive token policy with a value head.

Each step feeds ``embedding(previous token) ⊕ encoder(features)`` through a
tanh recurrent cell and projects the state onto the vocabulary. The value
head is a separate three-layer tanh MLP on the observation features.
Gradients are computed by hand with reverse accumulation through the
unrolled recurrence.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .prompting import segment_utterance
from .vocab import Vocabulary

PARAM_NAMES = (
    "E", "W_enc", "b_enc", "W_in", "W_h", "b_h", "W_out", "b_out",
    "V1", "c1", "V2", "c2", "V3", "c3",
)
INIT_SCALE = 0.08
MASKED = -1e30

Arrays = dict[str, np.ndarray]


@dataclass
class PolicyParams:
    arrays: Arrays
    vocab_size: int
    feat_dim: int
    d_model: int
    value_hidden: int

    @classmethod
    def init(cls, vocab_size: int, feat_dim: int, rng: np.random.Generator,
             d_model: int = 64, value_hidden: int = 64) -> "PolicyParams":
        V, k, d, h = vocab_size, feat_dim, d_model, value_hidden

        def u(*shape: int) -> np.ndarray:
            return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

        arrays = {
            "E": u(V, d),
            "W_enc": u(k, d), "b_enc": np.zeros(d),
            "W_in": u(2 * d, d), "W_h": u(d, d), "b_h": np.zeros(d),
            "W_out": u(d, V), "b_out": np.zeros(V),
            "V1": u(k, h), "c1": np.zeros(h),
            "V2": u(h, h), "c2": np.zeros(h),
            "V3": u(h, 1), "c3": np.zeros(1),
        }
        return cls(arrays, V, k, d, h)

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.arrays.items()},
                            self.vocab_size, self.feat_dim, self.d_model, self.value_hidden)

    def zeros_like(self) -> Arrays:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def num_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def equal(self, other: "PolicyParams") -> bool:
        return all(np.array_equal(self.arrays[k], other.arrays[k]) for k in PARAM_NAMES)


# --------------------------------------------------------------------------
# Forward / backward


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad token id sequences; returns (ids (B,L), lengths (B,))."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    L = int(lengths.max()) if len(seqs) else 0
    ids = np.full((len(seqs), max(L, 1)), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids, lengths


@dataclass
class ForwardCache:
    feats: np.ndarray
    ids: np.ndarray
    lengths: np.ndarray
    valid: np.ndarray  # (B, L) bool
    prev: np.ndarray
    u: np.ndarray
    H: np.ndarray
    logp_all: np.ndarray
    probs: np.ndarray
    token_logp: np.ndarray  # (B, L), zero beyond lengths
    entropy: np.ndarray  # (B, L), zero beyond lengths
    z1: np.ndarray
    z2: np.ndarray
    value: np.ndarray  # (B,)


def value_forward(p: Arrays, feats: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z1 = np.tanh(feats @ p["V1"] + p["c1"])
    z2 = np.tanh(z1 @ p["V2"] + p["c2"])
    return z1, z2, (z2 @ p["V3"] + p["c3"])[:, 0]


def forward(params: PolicyParams, feats: np.ndarray, ids: np.ndarray, lengths: np.ndarray,
            logit_bias: np.ndarray | None = None) -> ForwardCache:
    """Teacher-forced pass over padded sequences ``ids`` (B, L)."""
    p = params.arrays
    d = params.d_model
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    B, L = ids.shape
    valid = np.arange(L)[None, :] < lengths[:, None]
    prev = np.empty_like(ids)
    prev[:, 0] = 0  # BOS id
    prev[:, 1:] = ids[:, :-1]

    u = np.tanh(feats @ p["W_enc"] + p["b_enc"])
    const = u @ p["W_in"][d:] + p["b_h"]
    pre_e = (p["E"] @ p["W_in"][:d])[prev]
    H = np.empty((B, L, d))
    h = np.zeros((B, d))
    W_h = p["W_h"]
    for t in range(L):
        h = np.tanh(pre_e[:, t] + const + h @ W_h)
        H[:, t] = h
    logits = H @ p["W_out"] + p["b_out"]
    if logit_bias is not None:
        logits = logits + logit_bias
    logp_all = _log_softmax(logits)
    token_logp = np.take_along_axis(logp_all, ids[:, :, None], axis=2)[:, :, 0] * valid
    probs = np.exp(logp_all)
    entropy = -(probs * logp_all).sum(axis=-1) * valid
    z1, z2, value = value_forward(p, feats)
    return ForwardCache(feats, ids, lengths, valid, prev, u, H, logp_all, probs, token_logp, entropy, z1, z2, value)


def backward(params: PolicyParams, cache: ForwardCache, token_weights: np.ndarray,
             entropy_weights: np.ndarray | float = 0.0,
             value_weights: np.ndarray | float = 0.0,
             value_targets: np.ndarray | float = 0.0) -> tuple[float, Arrays]:
    """Gradient of the objective

        sum(token_weights * token_logp) + sum(entropy_weights * entropy)
        - sum(value_weights * (value - value_targets) ** 2)

    with respect to every parameter. Returns (objective, grads).
    """
    p = params.arrays
    d = params.d_model
    B, L = cache.ids.shape
    valid = cache.valid
    tw = np.broadcast_to(token_weights, (B, L)) * valid
    ew = np.broadcast_to(entropy_weights, (B, L)) * valid
    vw = np.broadcast_to(value_weights, (B,))
    vt = np.broadcast_to(value_targets, (B,))

    verr = cache.value - vt
    objective = float((tw * cache.token_logp).sum() + (ew * cache.entropy).sum() - (vw * verr**2).sum())

    g = params.zeros_like()
    probs = cache.probs
    # d logp[target] / d logits = onehot - p ; d H / d logits = -p * (logp + H)
    if np.any(ew):
        inner = cache.logp_all + cache.entropy[:, :, None]
        inner *= ew[:, :, None]
        inner += tw[:, :, None]
        dlogits = probs * inner
        np.negative(dlogits, out=dlogits)
    else:
        dlogits = probs * (-tw[:, :, None])
    bi, ti = np.nonzero(tw)
    dlogits[bi, ti, cache.ids[bi, ti]] += tw[bi, ti]

    H = cache.H
    flat_H = H.reshape(-1, d)
    flat_dl = dlogits.reshape(-1, dlogits.shape[-1])
    g["W_out"] = flat_H.T @ flat_dl
    g["b_out"] = flat_dl.sum(axis=0)
    dH = dlogits @ p["W_out"].T

    W_h_T = p["W_h"].T
    dpre = np.empty((B, L, d))
    dh_next = np.zeros((B, d))
    dW_h = np.zeros_like(p["W_h"])
    for t in range(L - 1, -1, -1):
        h = H[:, t]
        da = (dH[:, t] + dh_next) * (1.0 - h * h)
        if t > 0:
            dW_h += H[:, t - 1].T @ da
        dh_next = da @ W_h_T
        dpre[:, t] = da
    g["W_h"] = dW_h
    dconst = dpre.sum(axis=1)
    g["b_h"] = dconst.sum(axis=0)

    # scatter-add the per-position input gradients onto embedding rows
    flat_dpre = dpre.reshape(-1, d)
    prev_flat = cache.prev.reshape(-1)
    V = p["E"].shape[0]
    dP = np.stack([np.bincount(prev_flat, weights=flat_dpre[:, j], minlength=V) for j in range(d)], axis=1)
    dW_in = np.zeros_like(p["W_in"])
    dW_in[:d] = p["E"].T @ dP
    dW_in[d:] = cache.u.T @ dconst
    g["W_in"] = dW_in
    g["E"] = dP @ p["W_in"][:d].T
    dz = (dconst @ p["W_in"][d:].T) * (1.0 - cache.u**2)
    g["W_enc"] = cache.feats.T @ dz
    g["b_enc"] = dz.sum(axis=0)

    dv = -2.0 * vw * verr
    g["V3"] = cache.z2.T @ dv[:, None]
    g["c3"] = np.array([dv.sum()])
    dz2 = dv[:, None] @ p["V3"].T * (1.0 - cache.z2**2)
    g["V2"] = cache.z1.T @ dz2
    g["c2"] = dz2.sum(axis=0)
    dz1 = dz2 @ p["V2"].T * (1.0 - cache.z1**2)
    g["V1"] = cache.feats.T @ dz1
    g["c1"] = dz1.sum(axis=0)
    return objective, g


def range_weights(length: int, tht: range, act: range, lam: float) -> np.ndarray:
    """Per-token coefficients of the scaled log-prob: ``lam`` on thought, 1 on action."""
    w = np.zeros(length)
    w[tht.start:tht.stop] = lam
    w[act.start:act.stop] = 1.0
    return w


def scaled_action_logprob(logp_tht: float, logp_act: float, lam: float) -> float:
    """``lam * logp_tht + logp_act``; ``lam`` in [0, 1] down-weights the thought tokens."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return lam * logp_tht + logp_act


def value(params: PolicyParams, feats: np.ndarray) -> np.ndarray:
    """Value estimates for a (B, k) or (k,) feature array."""
    return value_forward(params.arrays, np.atleast_2d(feats))[2]


# --------------------------------------------------------------------------
# Utterances


@dataclass
class Utterance:
    ids: list[int]  # generated ids, including the end marker when emitted
    tokens: list[str]  # surface tokens, end marker excluded
    text: str
    tht_range: range
    act_range: range
    token_logps: np.ndarray  # aligned with ids, temperature-1 log-probs
    truncated: bool = False

    @property
    def logp_tht(self) -> float:
        return float(self.token_logps[self.tht_range.start:self.tht_range.stop].sum())

    @property
    def logp_act(self) -> float:
        return float(self.token_logps[self.act_range.start:self.act_range.stop].sum())

    def scaled_logp(self, lam: float) -> float:
        return scaled_action_logprob(self.logp_tht, self.logp_act, lam)


def make_utterance(vocab: Vocabulary, ids: Sequence[int], token_logps: np.ndarray | None = None,
                   truncated: bool = False) -> Utterance:
    ids = list(ids)
    body = ids[:-1] if ids and ids[-1] == vocab.eos else ids
    tokens = vocab.strings(body)
    tht, act = segment_utterance(tokens)
    logps = np.zeros(len(ids)) if token_logps is None else np.asarray(token_logps, dtype=np.float64)
    return Utterance(ids, tokens, "".join(tokens), tht, act, logps, truncated)


@dataclass
class TokenPolicy:
    """Parameters plus the vocabulary and decoding options they are used with."""

    params: PolicyParams
    vocab: Vocabulary
    logit_bias: np.ndarray | None = field(default=None)

    def set_constrained(self, allowed: Sequence[str] | None) -> None:
        """Restrict the next-token support to ``allowed`` (plus the end marker); None disables."""
        if allowed is None:
            self.logit_bias = None
            return
        bias = np.full(len(self.vocab), MASKED)
        for tok in allowed:
            bias[self.vocab.index[tok]] = 0.0
        bias[self.vocab.eos] = 0.0
        self.logit_bias = bias

    def sample(self, feats: np.ndarray, rng: np.random.Generator, temperature: float = 1.0,
               max_tokens: int = 128, greedy: bool = False) -> list[Utterance]:
        """Sample one utterance per feature row.

        Recorded log-probs are always at temperature 1. ``greedy`` takes the
        argmax token at every step and consumes no randomness.
        """
        if temperature <= 0 and not greedy:
            raise ValueError("temperature must be positive")
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        p = self.params.arrays
        d = self.params.d_model
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        N = feats.shape[0]
        u = np.tanh(feats @ p["W_enc"] + p["b_enc"])
        const = u @ p["W_in"][d:] + p["b_h"]
        emb_in = p["E"] @ p["W_in"][:d]
        h = np.zeros((N, d))
        prev = np.zeros(N, dtype=np.int64)
        finished = np.zeros(N, dtype=bool)
        ids = np.zeros((N, max_tokens), dtype=np.int64)
        logps = np.zeros((N, max_tokens))
        lengths = np.full(N, max_tokens)
        for t in range(max_tokens):
            h = np.tanh(emb_in[prev] + const + h @ p["W_h"])
            logits = h @ p["W_out"] + p["b_out"]
            if self.logit_bias is not None:
                logits = logits + self.logit_bias
            lp = _log_softmax(logits)
            if greedy:
                tok = lp.argmax(axis=1)
            else:
                pt = np.exp(_log_softmax(logits / temperature))
                cdf = np.cumsum(pt, axis=1)
                r = rng.random(N)
                tok = np.minimum((cdf <= r[:, None]).sum(axis=1), len(self.vocab) - 1)
            ids[:, t] = tok
            logps[:, t] = lp[np.arange(N), tok]
            newly = (~finished) & (tok == self.vocab.eos)
            lengths[newly] = t + 1
            finished |= newly
            prev = tok
            if finished.all():
                break
        out = []
        for i in range(N):
            n = int(lengths[i])
            out.append(make_utterance(self.vocab, ids[i, :n], logps[i, :n].copy(), truncated=not finished[i]))
        return out

    def score(self, feats: np.ndarray, ids: Sequence[int]) -> np.ndarray:
        """Teacher-forced per-token log-probs of one id sequence."""
        for i in ids:
            if not 0 <= i < len(self.vocab):
                raise ValueError(f"token id {i} outside the vocabulary")
        arr, lengths = pad_batch([ids])
        cache = forward(self.params, np.atleast_2d(feats), arr, lengths, self.logit_bias)
        return cache.token_logp[0, : len(ids)].copy()

    def score_batch(self, feats: np.ndarray, seqs: Sequence[Sequence[int]]) -> ForwardCache:
        arr, lengths = pad_batch(seqs)
        return forward(self.params, feats, arr, lengths, self.logit_bias)

    def value(self, feats: np.ndarray) -> np.ndarray:
        return value(self.params, feats)


def policy_gradient(params: PolicyParams, feats: np.ndarray, ids: Sequence[int], tht: range, act: range,
                    weight_policy: float, lam: float, target_value: float, weight_value: float,
                    logit_bias: np.ndarray | None = None) -> Arrays:
    """Gradient of ``weight_policy * (lam * logp_tht + logp_act) - weight_value * (value - target)**2``."""
    arr, lengths = pad_batch([ids])
    cache = forward(params, np.atleast_2d(feats), arr, lengths, logit_bias)
    tw = range_weights(len(ids), tht, act, lam)[None, :] * weight_policy
    _, grads = backward(params, cache, tw, 0.0, np.array([weight_value]), np.array([target_value]))
    return grads


# --------------------------------------------------------------------------
# Checkpoints

MAGIC = b"GCRLPOL1"
FORMAT_TAG = "gymcards-rl-policy/1"


def save_checkpoint(policy: TokenPolicy, path: str | Path, extra: dict | None = None) -> Path:
    """Binary container plus a sidecar ``.json`` manifest.

    Layout: magic, u32 header length, UTF-8 JSON header, then every tensor
    in ``PARAM_NAMES`` order as raw little-endian float64.
    """
    path = Path(path)
    prm = policy.params
    header = {
        "format": FORMAT_TAG,
        "vocab_size": prm.vocab_size,
        "feat_dim": prm.feat_dim,
        "d_model": prm.d_model,
        "value_hidden": prm.value_hidden,
        "vocab_sha256": policy.vocab.digest(),
        "tensors": [[k, list(prm.arrays[k].shape)] for k in PARAM_NAMES],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(prm.arrays[k], dtype="<f8").tobytes() for k in PARAM_NAMES)
    blob = MAGIC + struct.pack("<I", len(hbytes)) + hbytes + body
    path.write_bytes(blob)
    manifest = dict(header)
    manifest["sha256"] = hashlib.sha256(blob).hexdigest()
    manifest["vocab"] = policy.vocab.tokens
    if extra:
        manifest["extra"] = extra
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return path


def load_checkpoint(path: str | Path, vocab: Vocabulary | None = None) -> TokenPolicy:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a policy checkpoint")
    (hlen,) = struct.unpack("<I", blob[len(MAGIC): len(MAGIC) + 4])
    off = len(MAGIC) + 4
    header = json.loads(blob[off: off + hlen].decode("utf-8"))
    if header.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
    off += hlen
    arrays = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    if vocab is None:
        manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        vocab = Vocabulary(manifest["vocab"])
    if vocab.digest() != header["vocab_sha256"]:
        raise ValueError("checkpoint vocabulary does not match")
    params = PolicyParams(arrays, header["vocab_size"], header["feat_dim"], header["d_model"], header["value_hidden"])
    return TokenPolicy(params, vocab)
