"""Command line: dataset generation, training, evaluation, serving and reports.

Every run directory gets ``config.json`` (the resolved configuration) and,
for runs that act in an environment, ``metrics.csv`` and
``trajectories.jsonl``. Exit codes: 0 success, 2 configuration or usage
error, 1 runtime failure; errors go to stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from ..config import ConfigError, TrainConfig, preset
from ..gym_cards import TASKS
from ..pipeline import new_policy, sft_dataset, sft_policy
from ..rl_train import METRIC_FIELDS, metrics_csv, train
from ..sft import read_dataset, split_heldout, train_sft, write_dataset
from ..token_policy import TokenPolicy, load_checkpoint, save_checkpoint
from .diagnostics import logp_magnitudes
from .evaluate import evaluate
from .records import write_jsonl
from .report import plot_logp_bars, plot_sweep, plot_training

DEFAULT_LAMBDAS = (0.0, 0.1, 0.3, 0.5, 0.7, 1.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def shipped_checkpoint(task: str) -> Path | None:
    ref = resources.files("gymcards_rl.checkpoints").joinpath(f"{task}_sft.bin")
    return Path(str(ref)) if ref.is_file() else None


def _config(args: argparse.Namespace) -> TrainConfig:
    if args.config:
        try:
            cfg = TrainConfig.load(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if args.task and args.task != cfg.task:
            raise ConfigError(f"--task {args.task} conflicts with config task {cfg.task}")
    else:
        cfg = preset(args.task or "numberline")
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _outdir(args: argparse.Namespace, cfg: TrainConfig) -> Path:
    out = Path(args.out or f"runs/{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    return out


def _emit(**fields: object) -> None:
    print("\t".join(f"{k}={v}" for k, v in fields.items()), flush=True)


def _eval_row(res_summary: dict, env_steps: int = 0) -> dict:
    nan = float("nan")
    row = {k: nan for k in METRIC_FIELDS}
    row.update(iter=0, env_steps=env_steps, success_rate=res_summary["success_rate"],
               mean_return=res_summary["mean_return"], fallback_rate=res_summary["fallback_rate"], lr=0.0)
    return row


def _load_policy(args: argparse.Namespace, cfg: TrainConfig) -> TokenPolicy:
    path = args.checkpoint or cfg.init_checkpoint
    if path is None:
        shipped = shipped_checkpoint(cfg.task)
        if shipped is None:
            raise ConfigError(f"no checkpoint given and none shipped for {cfg.task}")
        path = shipped
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_sft_gen(args: argparse.Namespace, cfg: TrainConfig) -> int:
    out = _outdir(args, cfg)
    data = sft_dataset(cfg, args.examples)
    write_dataset(data, out / "dataset.jsonl")
    _emit(examples=len(data), task=cfg.task, cot=cfg.cot, path=out / "dataset.jsonl")
    return 0


def _finish_policy_run(out: Path, cfg: TrainConfig, policy: TokenPolicy, run_id: str, rows: list[dict]) -> dict:
    ev = evaluate(cfg.task, policy, cfg.eval_episodes, seed=cfg.seed, env_kwargs=cfg.env_kwargs(),
                  max_tokens=cfg.max_tokens, cot=cfg.cot, lambda_cot=cfg.lambda_cot, record=True, run_id=run_id)
    rows = rows or [_eval_row(ev.summary())]
    (out / "metrics.csv").write_text(metrics_csv(rows), encoding="utf-8")
    return ev.summary() | {"records": ev.records}


def cmd_sft_train(args: argparse.Namespace, cfg: TrainConfig) -> int:
    out = _outdir(args, cfg)
    if args.dataset:
        data = read_dataset(args.dataset)
        train_set, _ = split_heldout(data)
        policy = new_policy(cfg)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5F8]))
        losses = train_sft(policy, train_set, cfg.sft_epochs, cfg.sft_lr, rng, cfg.sft_batch_size)
    else:
        outcome = sft_policy(cfg)
        policy, losses = outcome.policy, outcome.losses
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss"])
    w.writerows([i, repr(float(v))] for i, v in enumerate(losses))
    (out / "sft_loss.csv").write_text(buf.getvalue(), encoding="utf-8")
    save_checkpoint(policy, out / "policy.bin", extra={"config": cfg.to_dict(), "stage": "sft"})
    summary = _finish_policy_run(out, cfg, policy, "sft", [])
    write_jsonl(summary.pop("records"), out / "trajectories.jsonl")
    _emit(success_rate=f"{summary['success_rate']:.4f}", fallback_rate=f"{summary['fallback_rate']:.4f}",
          sft_steps=len(losses), checkpoint=out / "policy.bin")
    return 0


def cmd_rl_train(args: argparse.Namespace, cfg: TrainConfig) -> int:
    out = _outdir(args, cfg)
    outcome = sft_policy(cfg)

    def progress(row: dict) -> None:
        if not args.quiet:
            _emit(iter=row["iter"], env_steps=row["env_steps"], success_rate=f"{row['success_rate']:.4f}",
                  fallback_rate=f"{row['fallback_rate']:.4f}")

    res = train(outcome.policy, cfg, run_id="rl", on_iteration=progress)
    (out / "metrics.csv").write_text(metrics_csv(res.metrics), encoding="utf-8")
    write_jsonl(res.trajectories, out / "trajectories.jsonl")
    save_checkpoint(res.policy, out / "policy.bin", extra={"config": cfg.to_dict(), "stage": "rl"})
    save_checkpoint(res.best_policy(), out / "policy_best.bin",
                    extra={"config": cfg.to_dict(), "stage": "rl", "iter": res.peak_iter})
    plot_training(res.metrics, out / "training.png", title=f"{cfg.task}, lambda={cfg.lambda_cot}")
    _emit(peak_success_rate=f"{res.peak_success:.4f}", peak_iter=res.peak_iter,
          final_success_rate=f"{res.final_success:.4f}", checkpoint=out / "policy.bin")
    if res.aborted:
        raise RuntimeError(f"training aborted: {res.aborted}")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: TrainConfig) -> int:
    out = _outdir(args, cfg)
    policy = _load_policy(args, cfg)
    if args.episodes is not None:
        cfg = cfg.replace(eval_episodes=args.episodes)
    summary = _finish_policy_run(out, cfg, policy, "eval", [])
    write_jsonl(summary.pop("records"), out / "trajectories.jsonl")
    _emit(success_rate=f"{summary['success_rate']:.4f}", mean_return=f"{summary['mean_return']:.4f}",
          fallback_rate=f"{summary['fallback_rate']:.4f}", episodes=summary["episodes"])
    return 0


def cmd_serve(args: argparse.Namespace, cfg: TrainConfig) -> int:
    from .wire import make_tcp_server, serve_stdio

    if args.port is None:
        serve_stdio()
        return 0
    server = make_tcp_server(args.host, args.port)
    print(json.dumps({"listening": list(server.server_address)}), file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_sweep_lambda(args: argparse.Namespace, cfg: TrainConfig) -> int:
    out = _outdir(args, cfg)
    lambdas = [float(x) for x in args.lambdas.split(",")] if args.lambdas else list(DEFAULT_LAMBDAS)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    curve_rows, summary_rows = [], []
    curves: dict[str, list[tuple[int, float]]] = {}
    for lam in lambdas:
        for seed in seeds:
            run_cfg = cfg.replace(lambda_cot=lam, seed=seed, log_trajectories=args.trajectories)
            run_dir = out / f"lambda_{lam:g}_seed_{seed}"
            run_dir.mkdir(exist_ok=True)
            (run_dir / "config.json").write_text(run_cfg.to_json(), encoding="utf-8")
            outcome = sft_policy(run_cfg)
            res = train(outcome.policy, run_cfg, run_id=run_dir.name)
            (run_dir / "metrics.csv").write_text(metrics_csv(res.metrics), encoding="utf-8")
            write_jsonl(res.trajectories, run_dir / "trajectories.jsonl")
            for row in res.metrics:
                curve_rows.append([repr(lam), seed, row["iter"], row["env_steps"], repr(float(row["success_rate"]))])
            curves[f"lambda={lam:g} seed={seed}"] = [(r["env_steps"], r["success_rate"]) for r in res.metrics]
            summary_rows.append([repr(lam), seed, repr(res.peak_success), res.peak_iter])
            _emit(lambda_cot=lam, seed=seed, peak_success_rate=f"{res.peak_success:.4f}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda_cot", "seed", "iter", "env_steps", "success_rate"])
    w.writerows(curve_rows)
    (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda_cot", "seed", "peak_success_rate", "peak_iter"])
    w.writerows(summary_rows)
    (out / "sweep_summary.csv").write_text(buf.getvalue(), encoding="utf-8")
    plot_sweep(curves, out / "sweep.png", title=f"{cfg.task}: lambda sweep")
    return 0


def cmd_diag_logp(args: argparse.Namespace, cfg: TrainConfig) -> int:
    out = _outdir(args, cfg)
    tasks = list(TASKS) if args.all_tasks else [cfg.task]
    rows = []
    for task in tasks:
        tcfg = cfg if task == cfg.task else preset(task).replace(seed=cfg.seed)
        if args.checkpoint and task == cfg.task:
            policy = load_checkpoint(args.checkpoint)
        else:
            policy = sft_policy(tcfg).policy
        row = logp_magnitudes(policy, task, args.samples, seed=tcfg.seed, temperature=tcfg.temperature,
                              max_tokens=tcfg.max_tokens, env_kwargs=tcfg.env_kwargs())
        rows.append(row)
        _emit(task=task, mean_logp_tht=f"{row['mean_logp_tht']:.3f}", mean_logp_act=f"{row['mean_logp_act']:.3f}")
    keys = list(rows[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    w.writerows([[r[k] if isinstance(r[k], str) else repr(r[k]) for k in keys] for r in rows])
    (out / "diag_logp.csv").write_text(buf.getvalue(), encoding="utf-8")
    plot_logp_bars(rows, out / "diag_logp.png")
    return 0


COMMANDS = {
    "sft-gen": cmd_sft_gen,
    "sft-train": cmd_sft_train,
    "rl-train": cmd_rl_train,
    "eval": cmd_eval,
    "serve": cmd_serve,
    "sweep-lambda": cmd_sweep_lambda,
    "diag-logp": cmd_diag_logp,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON training config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--task", choices=TASKS, help="task preset when no --config is given")

    parser = _Parser(prog="gymcards-rl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("sft-gen", parents=[common], help="write an oracle instruction dataset")
    p.add_argument("--examples", type=int, help="number of examples (default: config sft_examples)")
    p = sub.add_parser("sft-train", parents=[common], help="supervised training, saves a checkpoint")
    p.add_argument("--dataset", help="dataset JSONL written by sft-gen")
    p = sub.add_parser("rl-train", parents=[common], help="supervised warm start then PPO")
    p.add_argument("--quiet", action="store_true")
    p = sub.add_parser("eval", parents=[common], help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--episodes", type=int)
    p = sub.add_parser("serve", parents=[common], help="NDJSON environment server")
    p.add_argument("--port", type=int, help="TCP port (stdio when omitted)")
    p.add_argument("--host", default="127.0.0.1")
    p = sub.add_parser("sweep-lambda", parents=[common], help="train once per lambda_cot value")
    p.add_argument("--lambdas", help="comma-separated values (default 0,0.1,0.3,0.5,0.7,1)")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--trajectories", action="store_true", help="also keep per-run trajectories")
    p = sub.add_parser("diag-logp", parents=[common], help="thought vs action log-prob magnitudes")
    p.add_argument("--checkpoint")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--all-tasks", action="store_true")
    return parser


def _fail(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr, flush=True)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
    except (UsageError, ConfigError) as exc:
        return _fail("usage" if isinstance(exc, UsageError) else "config", exc, 2)
    try:
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail("config", exc, 2)
    except Exception as exc:
        return _fail("runtime", exc, 1)
