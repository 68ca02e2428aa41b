"""Seed derivation and action selection shared by every agent implementation."""

from __future__ import annotations

import numpy as np

_EPISODE_STREAM = 0
_ACTION_STREAM = 1


def episode_seed(seed: int, agent_id: int, episode: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(agent_id, _EPISODE_STREAM, episode))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def action_rng(seed: int, agent_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(agent_id, _ACTION_STREAM)))


def select_action(policy: np.ndarray, rng: np.random.Generator, greedy: bool = False) -> int:
    """Inverse-CDF sample from ``policy`` (or its argmax when ``greedy``)."""
    if greedy:
        return int(np.argmax(policy))
    cdf = np.cumsum(policy)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(policy) - 1)
