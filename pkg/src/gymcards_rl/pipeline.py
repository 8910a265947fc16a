"""Config-driven construction: fresh policy, supervised warm start, full run."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .features import feature_dim
from .rl_train import TrainResult, train
from .sft import SftExample, generate_dataset, split_heldout, train_sft
from .token_policy import PolicyParams, TokenPolicy, load_checkpoint
from .vocab import build_vocabulary, tokenize_text


def response_token_set(task: str) -> list[str]:
    from .sft import response_corpus
    from .vocab import _atoms

    toks = set(_atoms())
    for text in response_corpus(task):
        toks.update(tokenize_text(text))
    return sorted(toks)


def new_policy(config: TrainConfig) -> TokenPolicy:
    vocab = build_vocabulary(config.task)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x1417]))
    k = feature_dim(config.task, n_max=config.n_max, face_mode=config.face_mode)
    params = PolicyParams.init(len(vocab), k, rng, config.d_model, config.value_hidden)
    policy = TokenPolicy(params, vocab)
    if config.constrained_decoding:
        policy.set_constrained(response_token_set(config.task))
    return policy


def sft_dataset(config: TrainConfig, n: int | None = None) -> list[SftExample]:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5F7]))
    return generate_dataset(config.task, n or config.sft_examples, config.cot, rng, **config.env_kwargs())


@dataclass
class SftOutcome:
    policy: TokenPolicy
    losses: list[float]
    train: list[SftExample]
    heldout: list[SftExample]


def sft_policy(config: TrainConfig) -> SftOutcome:
    """Fresh policy trained on oracle data, or the configured checkpoint."""
    if config.init_checkpoint:
        policy = load_checkpoint(config.init_checkpoint)
        if config.constrained_decoding:
            policy.set_constrained(response_token_set(config.task))
        return SftOutcome(policy, [], [], [])
    policy = new_policy(config)
    if config.sft_examples == 0 or config.sft_epochs == 0:
        return SftOutcome(policy, [], [], [])
    data = sft_dataset(config)
    tr, ho = split_heldout(data)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5F8]))
    losses = train_sft(policy, tr, config.sft_epochs, config.sft_lr, rng, config.sft_batch_size)
    return SftOutcome(policy, losses, tr, ho)


def run(config: TrainConfig, run_id: str = "run", on_iteration=None) -> tuple[SftOutcome, TrainResult]:
    sft = sft_policy(config)
    return sft, train(sft.policy, config, run_id=run_id, on_iteration=on_iteration)
