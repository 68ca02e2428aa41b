"""Single-threaded trainer with the pipeline's math and no policy lag.

Agents take turns: each plays up to ``t_max`` steps with the current
parameters and the update is applied before anyone acts again, so every
experience is trained at the version that produced it. Running the
pipeline with one agent, one predictor, one trainer, ``min_train_batch=1``
and serialized hand-offs reproduces this trainer's parameter trajectory
bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .envs import EnvSpec, make_env
from .errors import InvalidInput, NonFiniteGradient
from .metrics import MetricsCollector, write_frames
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
from .pipeline import DEFAULT_HIDDEN, RunReport
from .returns import Experience, build_batch, clip_reward, merge_batches
from .sampling import action_rng, episode_seed, select_action


@dataclass(frozen=True)
class SyncConfig:
    hyper: Hyperparams
    env_spec: EnvSpec
    n_sequential_agents: int = 1
    max_updates: int = 1000
    seed: int = 0
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN
    greedy: bool = False

    def __post_init__(self) -> None:
        if self.n_sequential_agents < 1 or self.max_updates < 1 or self.seed < 0:
            raise InvalidInput("n_sequential_agents, max_updates must be >= 1 and seed >= 0")


class _SyncAgent:
    def __init__(self, agent_id: int, config: SyncConfig):
        self.agent_id = agent_id
        self.config = config
        self.env = make_env(config.env_spec)
        self.rng = action_rng(config.seed, agent_id)
        self.episode = 0
        self.score = 0.0
        self.obs = self.env.reset(episode_seed(config.seed, agent_id, 0))


def train_sync(
    config: SyncConfig,
    on_update: Callable[[ModelState], None] | None = None,
    metrics_out=None,
    frame_interval: float = 1.0,
) -> RunReport:
    hyper = config.hyper
    probe = make_env(config.env_spec)
    spec = NetworkSpec(probe.obs_dim, tuple(config.hidden_dims), probe.n_actions)
    model = init_model(spec, config.seed)
    rms = RmsState.zeros_like(model)
    metrics = MetricsCollector()
    metrics.set_knobs(config.n_sequential_agents, 1, 1)
    agents = [_SyncAgent(i, config) for i in range(config.n_sequential_agents)]
    frames = []
    start = time.perf_counter()
    next_frame = start + frame_interval
    updates = 0

    def predict(obs: np.ndarray) -> tuple[np.ndarray, float]:
        policies, values = forward(model, spec, np.stack([obs]))
        metrics.record_prediction_batch(1)
        return policies[0], float(values[0])

    while updates < config.max_updates:
        for agent in agents:
            segment: list[Experience] = []
            while True:
                policy, value = predict(agent.obs)
                action = select_action(policy, agent.rng, config.greedy)
                next_obs, reward, terminal = agent.env.step(action)
                agent.score += reward
                if hyper.clip_rewards:
                    reward = clip_reward(reward)
                segment.append(Experience(agent.obs, action, reward, value, model.version))
                metrics.record_produced(1)
                if terminal:
                    batch = build_batch(segment, True, 0.0, hyper.gamma, agent.agent_id)
                    metrics.record_episode(agent.score)
                    agent.score = 0.0
                    agent.episode += 1
                    agent.obs = agent.env.reset(
                        episode_seed(config.seed, agent.agent_id, agent.episode)
                    )
                    break
                agent.obs = next_obs
                if len(segment) == hyper.t_max:
                    _, bootstrap = predict(next_obs)
                    batch = build_batch(segment, False, bootstrap, hyper.gamma, agent.agent_id)
                    break

            merged = merge_batches([batch])
            try:
                packet = loss_and_gradients(model, spec, hyper, merged)
                model, rms = rmsprop_update(model, rms, packet, hyper)
            except NonFiniteGradient:
                metrics.record_rejected_update(len(merged))
                continue
            metrics.record_update(len(merged), (model.version - 1) - merged.produced_versions)
            if on_update is not None:
                on_update(model)
            updates += 1
            now = time.perf_counter()
            if now >= next_frame:
                frames.append(metrics.snapshot(now))
                next_frame += frame_interval
            if updates >= config.max_updates:
                break

    end = time.perf_counter()
    frames.append(metrics.snapshot(end))
    path = None
    if metrics_out is not None:
        write_frames(metrics_out, frames)
        path = metrics_out
    mean_lag, max_lag = metrics.lag_summary()
    return RunReport(
        total_updates=updates,
        total_predictions=metrics.predictions_total,
        total_episodes=metrics.episodes,
        wall_time=end - start,
        final_knobs=None,
        score_trajectory=[f.score_mean for f in frames],
        metrics_path=path,
        frames=frames,
        final_model=model,
        net_spec=spec,
        experiences_produced=metrics.experiences_produced,
        experiences_trained=metrics.experiences_trained,
        experiences_dropped=metrics.experiences_dropped,
        rejected_updates=metrics.rejected_updates,
        mean_lag=mean_lag,
        max_lag=max_lag,
        episode_scores=list(metrics.episode_scores),
    )
