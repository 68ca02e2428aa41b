"""Multi-run drivers: steady-state throughput, knob sweeps and lag studies."""

from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .envs import EnvSpec
from .nnet import Hyperparams
from .pipeline import DEFAULT_HIDDEN, KnobConfig, Pipeline, RunReport, StopCondition, run

LAG_STUDY_BATCHES = (1, 5, 10, 20, 40, 80)


@dataclass(frozen=True)
class Throughput:
    n_agents: int
    n_predictors: int
    n_trainers: int
    tps: float
    pps: float
    mean_lag: float


def measure_throughput(
    knobs: KnobConfig,
    hyper: Hyperparams,
    env_spec: EnvSpec,
    seconds: float,
    warmup: float = 0.5,
    seed: int = 0,
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN,
) -> Throughput:
    """TPS/PPS of a fixed configuration, ignoring the first ``warmup`` seconds."""
    pipeline = Pipeline(knobs, hyper, env_spec, seed=seed, hidden_dims=hidden_dims)
    metrics = pipeline.metrics
    pipeline.start()
    try:
        time.sleep(warmup)
        metrics.snapshot()
        time.sleep(seconds)
        frame = metrics.snapshot()
    finally:
        pipeline.stop()
    if pipeline.errors:
        raise RuntimeError("\n".join(pipeline.errors))
    return Throughput(*knobs.workers, frame.tps, frame.pps, frame.mean_lag)


def steady_rates(report: RunReport) -> tuple[float, float]:
    """Mean TPS/PPS over every frame but the first (warm-up) one."""
    frames = report.frames
    span = frames[-1].wall_time_s - frames[0].wall_time_s if len(frames) > 1 else 0.0
    if span <= 0:
        return report.tps, report.pps
    windows = [(f.wall_time_s - p.wall_time_s, f) for p, f in zip(frames, frames[1:])]
    tps = sum(w * f.tps for w, f in windows) / span
    pps = sum(w * f.pps for w, f in windows) / span
    return tps, pps


def _per_run_path(base: Path | None, tag: str) -> Path | None:
    if base is None:
        return None
    return base.with_name(f"{base.stem}.{tag}{base.suffix or '.csv'}")


SWEEP_COLUMNS = ("n_agents", "n_predictors", "n_trainers", "tps", "pps", "mean_lag", "updates")


def sweep(
    base: KnobConfig,
    hyper: Hyperparams,
    env_spec: EnvSpec,
    stop: StopCondition,
    agents: Sequence[int],
    predictors: Sequence[int],
    trainers: Sequence[int],
    *,
    seed: int = 0,
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN,
    metrics_out: Path | None = None,
    frame_interval: float = 1.0,
) -> list[dict]:
    """One run per grid point; returns and optionally writes the aggregate rows."""
    rows = []
    for n_a, n_p, n_t in itertools.product(agents, predictors, trainers):
        knobs = replace(base, n_agents=n_a, n_predictors=n_p, n_trainers=n_t)
        report = run(
            knobs, hyper, env_spec, stop,
            seed=seed, hidden_dims=hidden_dims, frame_interval=frame_interval,
            metrics_out=_per_run_path(metrics_out, f"a{n_a}p{n_p}t{n_t}"),
        )
        tps, pps = steady_rates(report)
        rows.append({
            "n_agents": n_a, "n_predictors": n_p, "n_trainers": n_t,
            "tps": tps, "pps": pps, "mean_lag": report.mean_lag, "updates": report.total_updates,
        })
    if metrics_out is not None:
        write_rows(metrics_out, SWEEP_COLUMNS, rows)
    return rows


LAG_COLUMNS = ("min_train_batch", "mean_lag", "max_lag", "tps", "pps", "score_mean", "episodes", "updates")


def lag_study(
    knobs: KnobConfig,
    hyper: Hyperparams,
    env_spec: EnvSpec,
    stop: StopCondition,
    batch_sizes: Iterable[int] = LAG_STUDY_BATCHES,
    *,
    seed: int = 0,
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN,
    metrics_out: Path | None = None,
    frame_interval: float = 1.0,
) -> list[dict]:
    """Same knobs and initial parameters, one run per minimum training batch."""
    rows = []
    for size in batch_sizes:
        report = run(
            replace(knobs, min_train_batch=size), hyper, env_spec, stop,
            seed=seed, hidden_dims=hidden_dims, frame_interval=frame_interval,
            metrics_out=_per_run_path(metrics_out, f"mb{size}"),
        )
        rows.append({
            "min_train_batch": size,
            "mean_lag": report.mean_lag,
            "max_lag": report.max_lag,
            "tps": report.tps,
            "pps": report.pps,
            "score_mean": report.score_trajectory[-1] if report.score_trajectory else 0.0,
            "episodes": report.total_episodes,
            "updates": report.total_updates,
        })
    if metrics_out is not None:
        write_rows(metrics_out, LAG_COLUMNS, rows)
    return rows


def write_rows(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_rows(path: Path) -> list[dict]:
    """Inverse of :func:`write_rows` for numeric columns."""

    def parse(text: str):
        try:
            return int(text)
        except ValueError:
            return float(text)

    with open(path, newline="") as fh:
        return [{k: parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]
