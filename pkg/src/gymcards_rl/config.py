"""Training configuration: one JSON object, unknown keys rejected.

Defaults are desk-scale. ``lambda_cot`` weights the thought-segment
log-probability; values between 0.2 and 0.5 are the usual working range.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

from .gym_cards import TASKS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    task: str = "numberline"
    cot: bool = True
    # PPO
    lambda_cot: float = 0.5
    gamma: float = 0.99
    lambda_gae: float = 0.95
    clip_eps: float = 0.2
    ppo_epochs: int = 4
    buffer_size: int = 512
    minibatch_size: int = 128
    lr_init: float = 3e-3
    lr_final: float = 3e-6
    lr_max_steps: int = 200
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True
    adam_eps: float = 1e-5
    # decoding
    temperature: float = 1.0
    max_tokens: int = 128
    constrained_decoding: bool = False
    # budget and evaluation
    seed: int = 0
    total_env_steps: int = 50_000
    n_envs: int = 16
    eval_episodes: int = 200
    eval_every: int = 1
    early_stop_success: float | None = None
    # model
    d_model: int = 64
    value_hidden: int = 64
    # supervised warm start
    sft_examples: int = 5000
    sft_epochs: int = 1
    sft_lr: float = 3e-3
    sft_batch_size: int = 16
    init_checkpoint: str | None = None
    # environment options
    n_max: int = 5
    face_mode: bool = False
    natural_bonus: bool = False
    # output
    log_trajectories: bool = True

    def validate(self) -> "TrainConfig":
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        need(self.task in TASKS, f"task must be one of {list(TASKS)}")
        need(0.0 <= self.lambda_cot <= 1.0, "lambda_cot must lie in [0, 1]")
        need(0.0 < self.gamma <= 1.0, "gamma must lie in (0, 1]")
        need(0.0 <= self.lambda_gae <= 1.0, "lambda_gae must lie in [0, 1]")
        need(0.0 < self.clip_eps < 1.0, "clip_eps must lie in (0, 1)")
        need(self.ppo_epochs >= 1, "ppo_epochs must be >= 1")
        need(self.buffer_size >= 1, "buffer_size must be >= 1")
        need(1 <= self.minibatch_size <= self.buffer_size, "minibatch_size must lie in [1, buffer_size]")
        need(self.n_envs >= 1 and self.buffer_size % self.n_envs == 0, "n_envs must divide buffer_size")
        need(self.lr_init >= 0 and self.lr_final >= 0, "learning rates must be >= 0")
        need(self.lr_max_steps >= 1, "lr_max_steps must be >= 1")
        need(self.entropy_coef >= 0 and self.value_coef >= 0, "loss coefficients must be >= 0")
        need(self.max_grad_norm > 0, "max_grad_norm must be > 0")
        need(self.adam_eps > 0, "adam_eps must be > 0")
        need(self.temperature > 0, "temperature must be > 0")
        need(self.max_tokens >= 1, "max_tokens must be >= 1")
        need(self.total_env_steps >= 0, "total_env_steps must be >= 0")
        need(self.eval_episodes >= 1 and self.eval_every >= 1, "eval_episodes and eval_every must be >= 1")
        need(self.d_model >= 1 and self.value_hidden >= 1, "model dims must be >= 1")
        need(self.sft_examples >= 0 and self.sft_epochs >= 0, "sft sizes must be >= 0")
        need(self.sft_lr >= 0 and self.sft_batch_size >= 1, "invalid sft optimizer settings")
        need(self.n_max >= 1, "n_max must be >= 1")
        need(self.early_stop_success is None or 0.0 <= self.early_stop_success <= 1.0,
             "early_stop_success must be null or lie in [0, 1]")
        return self

    @property
    def iterations(self) -> int:
        return self.total_env_steps // self.buffer_size

    def env_kwargs(self) -> dict[str, Any]:
        if self.task == "numberline":
            return {"n_max": self.n_max}
        if self.task == "blackjack":
            return {"natural_bonus": self.natural_bonus}
        return {"face_mode": self.face_mode}

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        clean = {}
        for key, val in data.items():
            default = getattr(cls, key)
            if isinstance(default, bool):
                ok = isinstance(val, bool)
            elif isinstance(default, int):
                ok = isinstance(val, int) and not isinstance(val, bool)
            elif isinstance(default, float):
                ok = isinstance(val, (int, float)) and not isinstance(val, bool)
                val = float(val) if ok else val
            elif key == "init_checkpoint":
                ok = val is None or isinstance(val, str)
            elif key == "early_stop_success":
                ok = val is None or (isinstance(val, (int, float)) and not isinstance(val, bool))
                val = float(val) if ok and val is not None else val
            else:
                ok = isinstance(val, str)
            if not ok:
                raise ConfigError(f"bad type for {key}: {val!r}")
            clean[key] = val
        return cls(**clean).validate()

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def replace(self, **changes: Any) -> "TrainConfig":
        return replace(self, **changes).validate()


def preset(task: str, scale: str = "desk") -> TrainConfig:
    """Per-task defaults. ``scale="large"`` uses the optimizer schedule suited to a multi-billion-parameter model."""
    cfg = TrainConfig(task=task)
    if task == "blackjack":
        cfg = replace(cfg, eval_episodes=1000, total_env_steps=50_000)
    if task in ("ezpoints", "points24"):
        # one epoch leaves these policies without the response format; two is the smallest that has it
        cfg = replace(cfg, buffer_size=1024, minibatch_size=128, total_env_steps=100_000, sft_epochs=2)
    if scale == "large":
        cfg = replace(cfg, lr_init=1e-5, lr_final=1e-9, lr_max_steps=25)
    elif scale != "desk":
        raise ConfigError(f"unknown preset scale {scale!r}")
    return cfg.validate()
