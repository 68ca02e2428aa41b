"""Bootstrapped k-step discounted returns and the experience containers."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action: int
    reward: float
    value_at_play: float
    produced_version: int


@dataclass
class ExperienceBatch:
    """Consecutive experiences from one agent plus their returns.

    ``applied`` is set by the trainer once the batch has been consumed; the
    serialized pipeline mode waits on it.
    """

    experiences: list[Experience]
    returns: np.ndarray
    terminal: bool
    agent_id: int
    applied: threading.Event | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.experiences:
            raise InvalidInput("an experience batch needs at least one experience")
        if len(self.returns) != len(self.experiences):
            raise InvalidInput("one return per experience is required")

    def __len__(self) -> int:
        return len(self.experiences)

    @property
    def states(self) -> np.ndarray:
        return np.stack([e.state for e in self.experiences])

    @property
    def actions(self) -> np.ndarray:
        return np.array([e.action for e in self.experiences], dtype=np.int64)

    @property
    def produced_versions(self) -> np.ndarray:
        return np.array([e.produced_version for e in self.experiences], dtype=np.int64)


@dataclass(frozen=True)
class MergedBatch:
    """Several agents' batches flattened into one training input."""

    states: np.ndarray
    actions: np.ndarray
    returns: np.ndarray
    produced_versions: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


def merge_batches(batches: Sequence[ExperienceBatch]) -> MergedBatch:
    exps = [e for b in batches for e in b.experiences]
    return MergedBatch(
        states=np.stack([e.state for e in exps]),
        actions=np.array([e.action for e in exps], dtype=np.int64),
        returns=np.concatenate([b.returns for b in batches]),
        produced_versions=np.array([e.produced_version for e in exps], dtype=np.int64),
    )


def compute_returns(
    rewards: Sequence[float], terminal: bool, bootstrap_value: float, gamma: float
) -> np.ndarray:
    """R_j = r_j + gamma * R_{j+1}, seeded with 0 at terminal else ``bootstrap_value``."""
    if len(rewards) == 0:
        raise InvalidInput("rewards must be non-empty")
    if not 0.0 < gamma <= 1.0:
        raise InvalidInput(f"gamma must lie in (0, 1], got {gamma}")
    rewards = [float(r) for r in rewards]
    if not all(np.isfinite(rewards)):
        raise InvalidInput("rewards contain non-finite values")
    running = 0.0 if terminal else float(bootstrap_value)
    if not np.isfinite(running):
        raise InvalidInput("bootstrap value is not finite")
    out = np.empty(len(rewards))
    for j in range(len(rewards) - 1, -1, -1):
        running = rewards[j] + gamma * running
        out[j] = running
    return out


def clip_reward(reward: float) -> float:
    return float(np.clip(reward, -1.0, 1.0))


def build_batch(
    experiences: list[Experience],
    terminal: bool,
    bootstrap_value: float,
    gamma: float,
    agent_id: int,
) -> ExperienceBatch:
    returns = compute_returns([e.reward for e in experiences], terminal, bootstrap_value, gamma)
    return ExperienceBatch(list(experiences), returns, terminal, agent_id)
