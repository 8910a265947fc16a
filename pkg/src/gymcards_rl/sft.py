"""Oracle-driven instruction data and supervised training of the token policy."""

from __future__ import annotations

import json
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env_core import Observation
from .features import featurize
from .gym_cards import make_env
from .optim import Adam, clip_by_global_norm
from .oracles import expert_action, plan_for_prefix
from .prompting import build_prompt
from .token_policy import TokenPolicy, backward, forward, pad_batch
from .vocab import tokenize_text

HELDOUT_FRACTION = 0.02


def _json_block(fields: Sequence[tuple[str, str]]) -> str:
    body = ",\n".join(f'"{k}": {v}' for k, v in fields)
    return "{\n" + body + "\n}"


def _q(s: str) -> str:
    return f'"{s}"'


def numberline_thought(target: int, current: int) -> str:
    if current < target:
        rel, verb, act = "smaller", "increase", "+"
    else:
        rel, verb, act = "larger", "decrease", "-"
    return (
        f"The current number is {current}, which is {rel} than the target number is {target}. "
        f"To move the current number closer to the target, I should {verb} the current number by choosing {act}."
    )


def blackjack_thought(player_sum: int, dealer_upvalue: int, action: str) -> str:
    dealer = 11 if dealer_upvalue == 1 else dealer_upvalue
    return f"I have {player_sum} points and the dealer has {dealer} points. I think I should {action}."


def formula_thought(formula: Sequence[str], plan: Sequence[str], target: int, action: str) -> str:
    cur = "".join(formula)
    eq = f"{''.join(plan)}={target}"
    if action == "=":
        return f"'{cur}' is a complete formula, since '{eq}', I should output '='"
    return f"'{cur}' is an incomplete formula, since '{eq}', I should append '{action}' to the current formula"


def render_response(obs: Observation, action: str, cot: bool, plan: Sequence[str] | None = None) -> str:
    """Oracle response text for ``obs`` choosing ``action``.

    Formula tasks need the full solver ``plan`` for the thought text; it is
    looked up when not given.
    """
    act = ("action", _q(action))
    if not cot:
        return _json_block([act])
    s = obs.symbolic
    task = obs.task_id
    if task == "numberline":
        return _json_block([
            ("current number", _q(str(s["current"]))),
            ("target number", _q(str(s["target"]))),
            ("thoughts", _q(numberline_thought(s["target"], s["current"]))),
            act,
        ])
    if task == "blackjack":
        return _json_block([("thoughts", _q(blackjack_thought(s["player_sum"], s["dealer_upvalue"], action))), act])
    if plan is None:
        plan = plan_for_prefix(s["values"], s["target"], s["formula"])
        if plan is None:
            raise ValueError("no solution extends the current formula")
    return _json_block([
        ("cards", str(list(s["values"]))),
        ("formula", _q("".join(s["formula"]))),
        ("thoughts", _q(formula_thought(s["formula"], plan, s["target"], action))),
        act,
    ])


@dataclass
class SftExample:
    task_id: str
    cot: bool
    prompt_text: str
    response_text: str
    response_tokens: list[str]
    action: str
    observation: Observation

    def to_json(self) -> dict:
        return {
            "task": self.task_id,
            "cot": self.cot,
            "prompt": self.prompt_text,
            "response": self.response_text,
            "action": self.action,
            "symbolic": self.observation.symbolic,
        }


def _example(obs: Observation, cot: bool) -> SftExample | None:
    action = expert_action(obs)
    if action is None:
        return None
    response = render_response(obs, action, cot)
    return SftExample(obs.task_id, cot, build_prompt(obs, cot), response, tokenize_text(response), action, obs)


def oracle_states(task: str, rng: np.random.Generator, **env_kwargs) -> Iterator[Observation]:
    """Observations visited by the oracle from fresh random resets, forever."""
    env = make_env(task, **env_kwargs)
    while True:
        obs = env.reset(int(rng.integers(2**63)))
        while True:
            action = expert_action(obs)
            if action is None:
                break  # unsolvable deal
            yield obs
            res = env.step(action)
            if res.done:
                break
            obs = res.observation


def generate_dataset(task: str, n: int, cot: bool, rng: np.random.Generator, **env_kwargs) -> list[SftExample]:
    if n < 1:
        raise ValueError("n must be >= 1")
    out: list[SftExample] = []
    for obs in oracle_states(task, rng, **env_kwargs):
        ex = _example(obs, cot)
        if ex is not None:
            out.append(ex)
        if len(out) == n:
            return out
    raise AssertionError("unreachable")


def split_heldout(examples: Sequence[SftExample]) -> tuple[list[SftExample], list[SftExample]]:
    """Last 2% by index is held out."""
    k = max(1, int(round(len(examples) * HELDOUT_FRACTION)))
    return list(examples[:-k]), list(examples[-k:])


def write_dataset(examples: Sequence[SftExample], path: str | Path) -> None:
    lines = [json.dumps(ex.to_json(), sort_keys=True, ensure_ascii=False) for ex in examples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path: str | Path) -> list[SftExample]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        sym = rec["symbolic"]
        cls = type(make_env(rec["task"]))
        obs = Observation(rec["task"], sym, cls.render_text(sym), cls.action_space, 0)
        out.append(SftExample(rec["task"], rec["cot"], rec["prompt"], rec["response"],
                              tokenize_text(rec["response"]), rec["action"], obs))
    return out


def response_corpus(task: str) -> list[str]:
    """Representative responses covering every word the task's templates use."""
    texts = []
    if task == "numberline":
        for target, current in [(3, 0), (0, 3)]:
            obs = Observation(task, {"target": target, "current": current, "n_max": 5}, "", ("+", "-"), 0)
            texts += [render_response(obs, "+" if current < target else "-", c) for c in (True, False)]
        return texts
    if task == "blackjack":
        for action in ("stand", "hit"):
            obs = Observation(task, {"player_sum": 13, "dealer_upvalue": 8, "usable_ace": False}, "",
                              ("stand", "hit"), 0)
            texts += [render_response(obs, action, c) for c in (True, False)]
        return texts
    values = [7, 5] if task == "ezpoints" else [1, 2, 10, 1]
    target = 12 if task == "ezpoints" else 24
    plan = ["7", "+", "5"] if task == "ezpoints" else ["(", "2", "+", "10", ")", "*", "(", "1", "+", "1", ")"]
    for prefix, action in [([], plan[0]), (plan, "=")]:
        sym = {"values": values, "formula": list(prefix), "target": target}
        obs = Observation(task, sym, "", (), 0)
        texts += [render_response(obs, action, c, plan=plan) for c in (True, False)]
    return texts


# --------------------------------------------------------------------------
# Training


def encode_examples(policy: TokenPolicy, examples: Sequence[SftExample]) -> tuple[np.ndarray, list[list[int]]]:
    feats = np.stack([featurize(ex.observation) for ex in examples])
    ids = [[policy.vocab.index[t] for t in ex.response_tokens] + [policy.vocab.eos] for ex in examples]
    return feats, ids


def sft_loss(policy: TokenPolicy, feats: np.ndarray, seqs: Sequence[Sequence[int]]) -> float:
    ids, lengths = pad_batch(seqs)
    cache = forward(policy.params, feats, ids, lengths, policy.logit_bias)
    return float(-cache.token_logp.sum() / lengths.sum())


def train_sft(policy: TokenPolicy, examples: Sequence[SftExample], epochs: int, lr: float,
              rng: np.random.Generator, batch_size: int = 32, max_grad_norm: float = 1.0) -> list[float]:
    """Minimize mean per-token NLL of the responses; updates ``policy`` in place.

    Returns the loss of every minibatch step.
    """
    if not examples:
        raise ValueError("empty dataset")
    feats, seqs = encode_examples(policy, examples)
    params = policy.params
    opt = Adam(params.arrays)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(examples))
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            ids, lengths = pad_batch([seqs[i] for i in idx])
            cache = forward(params, feats[idx], ids, lengths, policy.logit_bias)
            n_tok = float(lengths.sum())
            obj, grads = backward(params, cache, 1.0 / n_tok)
            loss = -obj
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite SFT loss at step {len(losses)}")
            grads = {k: -g for k, g in grads.items()}
            grads, _ = clip_by_global_norm(grads, max_grad_norm)
            opt.step(params.arrays, grads, lr)
            losses.append(loss)
    return losses
