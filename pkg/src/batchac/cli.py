"""Command-line entry point: train, train-sync, bench, sweep, lag-study."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .annealer import AnnealDriver, AnnealState
from .envs import KINDS, EnvSpec
from .errors import InvalidInput, PipelineError
from .nnet import Hyperparams
from .pipeline import DEFAULT_HIDDEN, KnobConfig, StopCondition, default_agent_count, run
from .reference import SyncConfig, train_sync
from .studies import LAG_STUDY_BATCHES, lag_study, steady_rates, sweep

COMMANDS = ("train", "train-sync", "bench", "sweep", "lag-study")
LR_PRESETS = {"high": 3e-4, "low": 1e-4}
DEFAULT_SECONDS = {"train": 60.0, "bench": 30.0, "sweep": 10.0, "lag-study": 60.0}
DEFAULT_SYNC_UPDATES = 10_000


@dataclass(frozen=True)
class RunConfig:
    command: str
    env: EnvSpec
    knobs: KnobConfig
    hyper: Hyperparams
    stop: StopCondition
    metrics_out: Path
    seed: int = 0
    anneal: bool = False
    epoch_s: float = 60.0
    anneal_epochs: int | None = None
    knob_ceiling: int | None = None
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN
    frame_interval: float = 1.0
    sync_agents: int = 1
    serialized: bool = False
    sweep_agents: tuple[int, ...] = ()
    sweep_predictors: tuple[int, ...] = ()
    sweep_trainers: tuple[int, ...] = ()
    lag_batches: tuple[int, ...] = LAG_STUDY_BATCHES


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(_positive_int(part) for part in text.split(",") if part.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="batchac", description=__doc__)
    p.add_argument("command", choices=COMMANDS)

    env = p.add_argument_group("environment")
    env.add_argument("--env", choices=KINDS, default="catch")
    env.add_argument("--grid-size", type=int, default=5)
    env.add_argument("--contexts", type=_positive_int, default=4)
    env.add_argument("--arms", type=int, default=4)
    env.add_argument("--step-delay-us", type=float, default=500.0)
    env.add_argument("--episode-len", type=_positive_int, default=20)
    env.add_argument("--action-repeat", type=_positive_int, default=1)

    knobs = p.add_argument_group("workers")
    knobs.add_argument("--agents", type=_positive_int, default=None,
                       help="default: number of available CPU cores")
    knobs.add_argument("--predictors", type=_positive_int, default=2)
    knobs.add_argument("--trainers", type=_positive_int, default=2)
    knobs.add_argument("--min-batch", type=_positive_int, default=1)
    knobs.add_argument("--pred-batch-max", type=_positive_int, default=32)
    knobs.add_argument("--train-queue-cap", type=_positive_int, default=32)
    knobs.add_argument("--anneal", action="store_true")
    knobs.add_argument("--epoch-s", type=_positive_float, default=60.0)
    knobs.add_argument("--anneal-epochs", type=_positive_int, default=None)
    knobs.add_argument("--knob-ceiling", type=_positive_int, default=None)

    hp = p.add_argument_group("learning")
    hp.add_argument("--tmax", type=_positive_int, default=5)
    hp.add_argument("--gamma", type=float, default=0.99)
    hp.add_argument("--beta", type=float, default=0.01)
    lr = hp.add_mutually_exclusive_group()
    lr.add_argument("--lr", type=_positive_float, default=None)
    lr.add_argument("--lr-preset", choices=sorted(LR_PRESETS), default=None)
    hp.add_argument("--eps-log", type=_positive_float, default=1e-6)
    hp.add_argument("--alpha", type=float, default=0.99)
    hp.add_argument("--eps-rms", type=_positive_float, default=1e-8)
    hp.add_argument("--value-weight", type=float, default=0.5)
    hp.add_argument("--clip-norm", type=_positive_float, default=None)
    hp.add_argument("--clip-rewards", action="store_true")
    hp.add_argument("--hidden", type=_int_list, default=DEFAULT_HIDDEN,
                    help="comma-separated hidden layer widths")

    stop = p.add_argument_group("stop condition (pick one)").add_mutually_exclusive_group()
    stop.add_argument("--max-updates", type=_positive_int)
    stop.add_argument("--max-seconds", type=_positive_float)
    stop.add_argument("--target-score", type=float)

    out = p.add_argument_group("output")
    out.add_argument("--metrics-out", type=Path, default=Path("metrics.csv"))
    out.add_argument("--frame-interval", type=_positive_float, default=1.0)
    out.add_argument("--seed", type=int, default=0)

    extra = p.add_argument_group("mode-specific")
    extra.add_argument("--sync-agents", type=_positive_int, default=1)
    extra.add_argument("--serialized", action="store_true",
                       help="agents wait for their batch to be trained before acting again")
    extra.add_argument("--sweep-agents", type=_int_list, default=None)
    extra.add_argument("--sweep-predictors", type=_int_list, default=None)
    extra.add_argument("--sweep-trainers", type=_int_list, default=None)
    extra.add_argument("--lag-batches", type=_int_list, default=LAG_STUDY_BATCHES)
    return p


def parse_args(argv: Sequence[str] | None = None) -> RunConfig:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        env = EnvSpec(
            kind=ns.env, n_contexts=ns.contexts, n_actions=ns.arms, grid_size=ns.grid_size,
            step_delay_us=ns.step_delay_us, episode_len=ns.episode_len,
            action_repeat=ns.action_repeat,
        )
        knobs = KnobConfig(
            n_agents=ns.agents or default_agent_count(),
            n_predictors=ns.predictors,
            n_trainers=ns.trainers,
            pred_batch_max=ns.pred_batch_max,
            min_train_batch=ns.min_batch,
            train_queue_cap=ns.train_queue_cap,
        )
        eta = ns.lr if ns.lr is not None else LR_PRESETS[ns.lr_preset or "high"]
        hyper = Hyperparams(
            gamma=ns.gamma, t_max=ns.tmax, beta=ns.beta, eps_log=ns.eps_log, eta=eta,
            alpha=ns.alpha, eps_rms=ns.eps_rms, value_loss_weight=ns.value_weight,
            clip_norm=ns.clip_norm, clip_rewards=ns.clip_rewards,
        )
        knobs.check(hyper.t_max)
        if ns.command == "train-sync":
            if ns.max_seconds is not None or ns.target_score is not None:
                raise InvalidInput("train-sync only supports --max-updates")
            stop = StopCondition(max_updates=ns.max_updates or DEFAULT_SYNC_UPDATES)
        elif ns.max_updates is None and ns.max_seconds is None and ns.target_score is None:
            stop = StopCondition(max_seconds=DEFAULT_SECONDS[ns.command])
        else:
            stop = StopCondition(ns.max_updates, ns.max_seconds, ns.target_score)
    except InvalidInput as exc:
        parser.error(str(exc))

    return RunConfig(
        command=ns.command, env=env, knobs=knobs, hyper=hyper, stop=stop,
        metrics_out=ns.metrics_out, seed=ns.seed, anneal=ns.anneal, epoch_s=ns.epoch_s,
        anneal_epochs=ns.anneal_epochs, knob_ceiling=ns.knob_ceiling,
        hidden_dims=tuple(ns.hidden), frame_interval=ns.frame_interval,
        sync_agents=ns.sync_agents, serialized=ns.serialized,
        sweep_agents=ns.sweep_agents or (knobs.n_agents,),
        sweep_predictors=ns.sweep_predictors or (knobs.n_predictors,),
        sweep_trainers=ns.sweep_trainers or (knobs.n_trainers,),
        lag_batches=tuple(ns.lag_batches),
    )


def _banner(config: RunConfig) -> str:
    data = asdict(config)
    data["metrics_out"] = str(config.metrics_out)
    return "config " + json.dumps(data, sort_keys=True, default=str)


def _print_rows(rows: list[dict]) -> None:
    for row in rows:
        print(" ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))


def execute(config: RunConfig) -> None:
    common = dict(seed=config.seed, hidden_dims=config.hidden_dims)
    if config.command == "train-sync":
        report = train_sync(
            SyncConfig(config.hyper, config.env, config.sync_agents,
                       config.stop.max_updates, config.seed, config.hidden_dims),
            metrics_out=config.metrics_out, frame_interval=config.frame_interval,
        )
        print(report.summary(timing=False))
        return

    if config.command in ("train", "bench"):
        annealer = None
        if config.anneal:
            annealer = AnnealDriver(
                AnnealState.create(config.knobs, seed=config.seed,
                                   epoch_length=config.epoch_s, ceiling=config.knob_ceiling),
                max_epochs=config.anneal_epochs,
            )
        report = run(
            config.knobs, config.hyper, config.env, config.stop,
            annealer=annealer, frame_interval=config.frame_interval,
            metrics_out=config.metrics_out, serialized=config.serialized, **common,
        )
        if config.command == "bench":
            tps, pps = steady_rates(report)
            print(f"steady tps={tps:.1f} pps={pps:.1f}")
        print(report.summary())
        return

    if config.command == "sweep":
        rows = sweep(
            config.knobs, config.hyper, config.env, config.stop,
            config.sweep_agents, config.sweep_predictors, config.sweep_trainers,
            metrics_out=config.metrics_out, frame_interval=config.frame_interval, **common,
        )
    else:
        rows = lag_study(
            config.knobs, config.hyper, config.env, config.stop, config.lag_batches,
            metrics_out=config.metrics_out, frame_interval=config.frame_interval, **common,
        )
    _print_rows(rows)
    print(f"wrote {len(rows)} rows to {config.metrics_out}")


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    config = parse_args(argv)
    print(_banner(config))
    try:
        execute(config)
    except (PipelineError, InvalidInput, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
