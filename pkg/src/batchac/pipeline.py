"""Concurrent agents / predictors / trainers around one shared model.

Agents push :class:`PredictionRequest` objects onto a bounded prediction
queue and block on their private reply slot. Predictors drain whatever is
waiting (up to ``pred_batch_max``), run one batched forward pass on the
current parameter snapshot and route the results back. Agents emit
:class:`~batchac.returns.ExperienceBatch` objects onto a bounded training
queue; trainers coalesce them up to ``min_train_batch`` experiences and
apply one RMSProp step each, serialized behind a single writer lock.

Parameter snapshots are immutable, so a predictor that grabbed the model
reference always sees one coherent version.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import os
import queue
import threading
import time
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .envs import EnvSpec, make_env
from .errors import InvalidInput, NonFiniteGradient, PipelineError
from .metrics import SCORE_WINDOW, MetricsCollector, MetricsFrame, write_frames
from .nnet import (
    Hyperparams,
    ModelState,
    NetworkSpec,
    RmsState,
    forward,
    init_model,
    loss_and_gradients,
    rmsprop_update,
)
from .returns import Experience, ExperienceBatch, build_batch, clip_reward, merge_batches
from .sampling import action_rng, episode_seed, select_action

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = (64,)
_POLL = 0.05


def default_agent_count() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass(frozen=True)
class KnobConfig:
    n_agents: int = field(default_factory=default_agent_count)
    n_predictors: int = 2
    n_trainers: int = 2
    pred_batch_max: int = 32
    min_train_batch: int = 1
    train_queue_cap: int = 32
    pred_queue_cap: int | None = None

    def __post_init__(self) -> None:
        for name in ("n_agents", "n_predictors", "n_trainers", "pred_batch_max",
                     "min_train_batch", "train_queue_cap"):
            if getattr(self, name) < 1:
                raise InvalidInput(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.pred_queue_cap is not None and self.pred_queue_cap < 1:
            raise InvalidInput("pred_queue_cap must be >= 1")

    @property
    def workers(self) -> tuple[int, int, int]:
        return self.n_agents, self.n_predictors, self.n_trainers

    def check(self, t_max: int) -> None:
        if self.min_train_batch > self.train_queue_cap * t_max:
            raise InvalidInput(
                f"min_train_batch={self.min_train_batch} can never be met with "
                f"train_queue_cap={self.train_queue_cap} and t_max={t_max}"
            )


@dataclass(frozen=True)
class PredictionRequest:
    agent_id: int
    request_id: int
    state: np.ndarray
    enqueue_time: float
    reply: queue.Queue = field(repr=False, compare=False)


@dataclass(frozen=True)
class PredictionResponse:
    agent_id: int
    request_id: int
    policy: np.ndarray
    value: float
    model_version: int


@dataclass(frozen=True)
class StopCondition:
    max_updates: int | None = None
    max_seconds: float | None = None
    target_score: float | None = None

    def __post_init__(self) -> None:
        if self.max_updates is None and self.max_seconds is None and self.target_score is None:
            raise InvalidInput("a stop condition is required")


@dataclass
class RunReport:
    total_updates: int
    total_predictions: int
    total_episodes: int
    wall_time: float
    final_knobs: KnobConfig | None
    score_trajectory: list[float]
    metrics_path: Path | None
    frames: list[MetricsFrame]
    final_model: ModelState
    net_spec: NetworkSpec
    experiences_produced: int = 0
    experiences_trained: int = 0
    experiences_queued: int = 0
    experiences_dropped: int = 0
    rejected_updates: int = 0
    mean_lag: float = 0.0
    max_lag: int = 0
    episode_scores: list[float] = field(default_factory=list)
    anneal_history: list = field(default_factory=list)

    @property
    def tps(self) -> float:
        return self.total_updates / self.wall_time if self.wall_time > 0 else 0.0

    @property
    def pps(self) -> float:
        return self.total_predictions / self.wall_time if self.wall_time > 0 else 0.0

    def summary(self, timing: bool = True) -> str:
        """One-line report. ``timing=False`` drops wall-clock fields and adds a
        parameter digest, so deterministic runs print identical lines."""
        knobs = self.final_knobs.workers if self.final_knobs else "-"
        recent = self.episode_scores[-SCORE_WINDOW:]
        rolling = sum(recent) / len(recent) if recent else 0.0
        parts = [
            f"updates={self.total_updates}",
            f"predictions={self.total_predictions}",
            f"episodes={self.total_episodes}",
        ]
        if timing:
            parts += [f"wall={self.wall_time:.2f}s", f"tps={self.tps:.1f}", f"pps={self.pps:.1f}"]
        parts += [
            f"knobs={knobs}",
            f"score30={rolling:.4f}",
            f"mean_lag={self.mean_lag:.3f}",
            f"max_lag={self.max_lag}",
        ]
        if not timing:
            digest = hashlib.sha256(self.final_model.theta.tobytes()).hexdigest()[:16]
            parts.append(f"theta_sha256={digest}")
        return " ".join(parts)


class SharedModel:
    """The single parameter copy. Reads are lock-free, writes serialized."""

    def __init__(self, model: ModelState, rms: RmsState | None = None):
        self._model = model
        self._rms = rms if rms is not None else RmsState.zeros_like(model)
        self.write_lock = threading.Lock()

    @property
    def model(self) -> ModelState:
        return self._model

    @property
    def rms(self) -> RmsState:
        return self._rms

    def publish(self, model: ModelState, rms: RmsState) -> None:
        # Caller holds write_lock.
        self._rms = rms
        self._model = model


class _Stopped(Exception):
    pass


@dataclass
class _Worker:
    thread: threading.Thread
    stop: threading.Event


class Pipeline:
    """Live worker pools that can be resized while running."""

    def __init__(
        self,
        knobs: KnobConfig,
        hyper: Hyperparams,
        env_spec: EnvSpec,
        *,
        seed: int = 0,
        hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN,
        serialized: bool = False,
        greedy: bool = False,
        max_updates: int | None = None,
        on_update: Callable[[ModelState], None] | None = None,
        metrics: MetricsCollector | None = None,
    ):
        knobs.check(hyper.t_max)
        probe = make_env(env_spec)
        self.net_spec = NetworkSpec(probe.obs_dim, tuple(hidden_dims), probe.n_actions)
        self.knobs = knobs
        self.hyper = hyper
        self.env_spec = env_spec
        self.seed = seed
        self.serialized = serialized
        self.greedy = greedy
        self.max_updates = max_updates
        self.on_update = on_update
        self.metrics = metrics or MetricsCollector()

        self.shared = SharedModel(init_model(self.net_spec, seed))
        self._initial_version = self.shared.model.version
        self.pred_q: queue.Queue[PredictionRequest] = queue.Queue(
            maxsize=max(knobs.pred_queue_cap or knobs.n_agents, knobs.n_agents)
        )
        self.train_q: queue.Queue[ExperienceBatch] = queue.Queue(maxsize=knobs.train_queue_cap)

        self.shutdown = threading.Event()
        self.budget_exhausted = threading.Event()
        self.errors: list[str] = []
        self.agents: list[_Worker] = []
        self.predictors: list[_Worker] = []
        self.trainers: list[_Worker] = []
        self._agent_ids = itertools.count()
        self._started = False
        self.experiences_queued = 0

    # -- pool management -------------------------------------------------

    @property
    def updates(self) -> int:
        return self.shared.model.version - self._initial_version

    def start(self) -> None:
        self._started = True
        self.reconfigure(self.knobs)

    def reconfigure(self, knobs: KnobConfig) -> None:
        """Grow or shrink worker pools to match ``knobs``; newest workers go first."""
        knobs.check(self.hyper.t_max)
        self.knobs = knobs
        with self.pred_q.mutex:
            self.pred_q.maxsize = max(knobs.pred_queue_cap or knobs.n_agents, knobs.n_agents)
        self._resize(self.agents, knobs.n_agents, self._spawn_agent)
        self._resize(self.predictors, knobs.n_predictors, lambda: self._spawn("predictor", self._predictor_loop))
        self._resize(self.trainers, knobs.n_trainers, lambda: self._spawn("trainer", self._trainer_loop))
        self.metrics.set_knobs(*knobs.workers)

    def _resize(self, pool: list[_Worker], target: int, spawn: Callable[[], _Worker]) -> None:
        while len(pool) < target:
            pool.append(spawn())
        removed = []
        while len(pool) > target:
            worker = pool.pop()
            worker.stop.set()
            removed.append(worker)
        for worker in removed:
            worker.thread.join()

    def _spawn_agent(self) -> _Worker:
        agent_id = next(self._agent_ids)
        return self._spawn(f"agent-{agent_id}", self._agent_loop, agent_id)

    def _spawn(self, name: str, target, *args) -> _Worker:
        stop = threading.Event()
        thread = threading.Thread(
            target=self._guard, args=(name, target, stop, *args), name=name, daemon=True
        )
        thread.start()
        return _Worker(thread, stop)

    def _guard(self, name: str, target, stop: threading.Event, *args) -> None:
        try:
            target(stop, *args)
        except Exception:
            self.errors.append(f"{name} crashed:\n{traceback.format_exc()}")
            log.error("worker %s crashed", name, exc_info=True)
            self.shutdown.set()

    def _stopping(self, stop: threading.Event) -> bool:
        return stop.is_set() or self.shutdown.is_set()

    def stop(self) -> None:
        """Cancel every worker, join them and count what is left in the training queue."""
        self.shutdown.set()
        for pool in (self.agents, self.predictors, self.trainers):
            for worker in pool:
                worker.stop.set()
        for pool in (self.agents, self.predictors, self.trainers):
            for worker in pool:
                worker.thread.join()
        while True:
            try:
                batch = self.train_q.get_nowait()
            except queue.Empty:
                break
            self.experiences_queued += len(batch)

    # -- agents ----------------------------------------------------------

    def _agent_loop(self, stop: threading.Event, agent_id: int) -> None:
        env = make_env(self.env_spec)
        rng = action_rng(self.seed, agent_id)
        reply: queue.Queue[PredictionResponse] = queue.Queue(maxsize=1)
        request_ids = itertools.count()
        hyper = self.hyper

        def predict(state: np.ndarray) -> PredictionResponse:
            rid = next(request_ids)
            request = PredictionRequest(agent_id, rid, state, time.monotonic(), reply)
            while True:
                try:
                    self.pred_q.put(request, timeout=_POLL)
                    break
                except queue.Full:
                    if self._stopping(stop):
                        raise _Stopped
            while True:
                try:
                    response = reply.get(timeout=_POLL)
                except queue.Empty:
                    if self._stopping(stop):
                        raise _Stopped
                    continue
                if response.request_id != rid or response.agent_id != agent_id:
                    raise RuntimeError(
                        f"agent {agent_id} expected response {rid}, got "
                        f"{response.agent_id}/{response.request_id}"
                    )
                return response

        episode = 0
        segment: list[Experience] = []
        score = 0.0
        try:
            obs = env.reset(episode_seed(self.seed, agent_id, episode))
            response = predict(obs)
            while not self._stopping(stop):
                action = select_action(response.policy, rng, self.greedy)
                next_obs, reward, terminal = env.step(action)
                score += reward
                if hyper.clip_rewards:
                    reward = clip_reward(reward)
                segment.append(Experience(obs, action, reward, response.value, response.model_version))
                self.metrics.record_produced(1)
                if terminal:
                    batch = build_batch(segment, True, 0.0, hyper.gamma, agent_id)
                    segment = []
                    self.metrics.record_episode(score)
                    score = 0.0
                    self._submit(batch, stop)
                    episode += 1
                    obs = env.reset(episode_seed(self.seed, agent_id, episode))
                    response = predict(obs)
                    continue
                # The response for next_obs both bootstraps a full segment and
                # chooses the next action.
                response = predict(next_obs)
                obs = next_obs
                if len(segment) == hyper.t_max:
                    batch = build_batch(segment, False, response.value, hyper.gamma, agent_id)
                    segment = []
                    self._submit(batch, stop)
                    if self.serialized:
                        response = predict(obs)
        except _Stopped:
            pass
        finally:
            if segment:
                self.metrics.record_dropped(len(segment))

    def _submit(self, batch: ExperienceBatch, stop: threading.Event) -> None:
        if self.serialized:
            batch.applied = threading.Event()
        while True:
            try:
                self.train_q.put(batch, timeout=_POLL)
                break
            except queue.Full:
                if self._stopping(stop):
                    self.metrics.record_dropped(len(batch))
                    raise _Stopped
        if self.serialized:
            while not batch.applied.wait(_POLL):
                if self._stopping(stop):
                    raise _Stopped

    # -- predictors ------------------------------------------------------

    def _predictor_loop(self, stop: threading.Event) -> None:
        spec = self.net_spec
        while not self._stopping(stop):
            try:
                first = self.pred_q.get(timeout=_POLL)
            except queue.Empty:
                continue
            requests = [first]
            limit = self.knobs.pred_batch_max
            while len(requests) < limit:
                try:
                    requests.append(self.pred_q.get_nowait())
                except queue.Empty:
                    break
            model = self.shared.model
            policies, values = forward(model, spec, np.stack([r.state for r in requests]))
            for r, policy, value in zip(requests, policies, values):
                response = PredictionResponse(r.agent_id, r.request_id, policy, float(value), model.version)
                try:
                    r.reply.put_nowait(response)
                except queue.Full:  # requester was cancelled mid-flight
                    pass
            self.metrics.record_prediction_batch(len(requests))

    # -- trainers --------------------------------------------------------

    def _trainer_loop(self, stop: threading.Event) -> None:
        while not self._stopping(stop):
            batches: list[ExperienceBatch] = []
            total = 0
            while total < self.knobs.min_train_batch:
                try:
                    batch = self.train_q.get(timeout=_POLL)
                except queue.Empty:
                    if self._stopping(stop):
                        self._release(batches, requeue=not self.shutdown.is_set())
                        return
                    continue
                batches.append(batch)
                total += len(batch)
            self.metrics.record_queue_length(self.train_q.qsize())
            self._train(batches, total)

    def _release(self, batches: list[ExperienceBatch], requeue: bool) -> None:
        for batch in batches:
            if requeue:
                try:
                    self.train_q.put_nowait(batch)
                    continue
                except queue.Full:
                    pass
            self.metrics.record_dropped(len(batch))

    def _train(self, batches: list[ExperienceBatch], total: int) -> None:
        merged = merge_batches(batches)
        with self.shared.write_lock:
            if self.max_updates is not None and self.updates >= self.max_updates:
                self.budget_exhausted.set()
                self._release(batches, requeue=False)
                return
            model = self.shared.model
            try:
                packet = loss_and_gradients(model, self.net_spec, self.hyper, merged)
                new_model, new_rms = rmsprop_update(model, self.shared.rms, packet, self.hyper)
            except NonFiniteGradient:
                self.metrics.record_rejected_update(total)
                log.warning("rejected non-finite update at version %d", model.version)
            else:
                self.shared.publish(new_model, new_rms)
                self.metrics.record_update(total, model.version - merged.produced_versions)
                if self.on_update is not None:
                    self.on_update(new_model)
                if self.max_updates is not None and self.updates >= self.max_updates:
                    self.budget_exhausted.set()
        for batch in batches:
            if batch.applied is not None:
                batch.applied.set()


class Annealing(Protocol):
    history: list

    def start(self, now: float, updates_total: int) -> KnobConfig | None: ...

    def tick(self, now: float, updates_total: int) -> KnobConfig | None: ...


def run(
    knobs: KnobConfig,
    hyper: Hyperparams,
    env_spec: EnvSpec,
    stop: StopCondition,
    *,
    seed: int = 0,
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN,
    annealer: Annealing | None = None,
    frame_interval: float = 1.0,
    metrics_out: str | Path | None = None,
    serialized: bool = False,
    greedy: bool = False,
    on_update: Callable[[ModelState], None] | None = None,
    poll_interval: float = 0.005,
) -> RunReport:
    """Run the concurrent pipeline until ``stop`` fires and report on it."""
    metrics = MetricsCollector()
    pipeline = Pipeline(
        knobs, hyper, env_spec,
        seed=seed, hidden_dims=hidden_dims, serialized=serialized, greedy=greedy,
        max_updates=stop.max_updates, on_update=on_update, metrics=metrics,
    )
    frames: list[MetricsFrame] = []
    trajectory: list[float] = []
    start = time.perf_counter()
    next_frame = start + frame_interval
    pipeline.start()
    if annealer is not None:
        new = annealer.start(start, pipeline.updates)
        if new is not None:
            pipeline.reconfigure(new)
    try:
        while True:
            time.sleep(poll_interval)
            now = time.perf_counter()
            if pipeline.errors:
                break
            if now >= next_frame:
                frame = metrics.snapshot(now)
                frames.append(frame)
                trajectory.append(frame.score_mean)
                next_frame += frame_interval
            if pipeline.budget_exhausted.is_set():
                break
            if stop.max_seconds is not None and now - start >= stop.max_seconds:
                break
            if stop.target_score is not None and metrics.episodes >= metrics.score_window:
                rolling = metrics.rolling_score()
                if rolling is not None and rolling >= stop.target_score:
                    break
            if annealer is not None:
                new = annealer.tick(now, pipeline.updates)
                if new is not None:
                    pipeline.reconfigure(new)
    finally:
        pipeline.stop()
    end = time.perf_counter()
    frame = metrics.snapshot(end)
    frames.append(frame)
    trajectory.append(frame.score_mean)

    if pipeline.errors:
        raise PipelineError("pipeline aborted:\n" + "\n".join(pipeline.errors))

    path = None
    if metrics_out is not None:
        path = Path(metrics_out)
        write_frames(path, frames)

    mean_lag, max_lag = metrics.lag_summary()
    return RunReport(
        total_updates=pipeline.updates,
        total_predictions=metrics.predictions_total,
        total_episodes=metrics.episodes,
        wall_time=end - start,
        final_knobs=pipeline.knobs,
        score_trajectory=trajectory,
        metrics_path=path,
        frames=frames,
        final_model=pipeline.shared.model,
        net_spec=pipeline.net_spec,
        experiences_produced=metrics.experiences_produced,
        experiences_trained=metrics.experiences_trained,
        experiences_queued=pipeline.experiences_queued,
        experiences_dropped=metrics.experiences_dropped,
        rejected_updates=metrics.rejected_updates,
        mean_lag=mean_lag,
        max_lag=max_lag,
        episode_scores=list(metrics.episode_scores),
        anneal_history=list(annealer.history) if annealer is not None else [],
    )


def with_knobs(knobs: KnobConfig, n_agents: int, n_predictors: int, n_trainers: int) -> KnobConfig:
    return replace(knobs, n_agents=n_agents, n_predictors=n_predictors, n_trainers=n_trainers)
