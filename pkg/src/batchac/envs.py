"""Seedable toy environments with known optima plus a latency lab.

``contextual_bandit``: one-step episodes; the observation is a one-hot
context and exactly one arm per context pays 1.

``catch``: a ball falls down a G x G grid, one row per step; the paddle on
the bottom row moves left/stay/right. After G - 1 steps the episode ends with
+1 if the paddle sits under the ball and -1 otherwise.

``delay_lab``: zero observations and zero rewards; every step burns a fixed
amount of CPU time, standing in for an expensive simulator.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import EnvUsageError, InvalidInput

KINDS = ("contextual_bandit", "catch", "delay_lab")


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "catch"
    n_contexts: int = 4
    n_actions: int = 4
    grid_size: int = 5
    step_delay_us: float = 500.0
    episode_len: int = 20
    obs_dim: int = 4
    layout_seed: int = 0
    action_repeat: int = 1

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown env kind {self.kind!r}; expected one of {KINDS}")
        if self.grid_size < 3:
            raise InvalidInput("grid_size must be >= 3")
        if self.n_actions < 2 or self.n_contexts < 1:
            raise InvalidInput("bandit needs n_actions >= 2 and n_contexts >= 1")
        if self.step_delay_us < 0 or self.episode_len < 1 or self.obs_dim < 1:
            raise InvalidInput("delay_lab needs step_delay >= 0, episode_len >= 1, obs_dim >= 1")
        if self.action_repeat < 1:
            raise InvalidInput("action_repeat must be >= 1")


class Env:
    obs_dim: int
    n_actions: int

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.step_index = 0
        self.terminal = True
        self.rng = np.random.default_rng(0)

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.step_index = 0
        self.terminal = False
        return self._reset()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.terminal:
            raise EnvUsageError("step() called on a terminal environment; reset() first")
        if not 0 <= action < self.n_actions:
            raise EnvUsageError(f"action {action} outside [0, {self.n_actions})")
        total = 0.0
        for _ in range(self.spec.action_repeat):
            obs, reward, terminal = self._step(int(action))
            self.step_index += 1
            total += reward
            if terminal:
                break
        self.terminal = terminal
        return obs, total, terminal

    def optimal_expected_return(self) -> float:
        raise NotImplementedError(f"{self.spec.kind} has no defined optimum")

    def _reset(self) -> np.ndarray:
        raise NotImplementedError

    def _step(self, action: int) -> tuple[np.ndarray, float, bool]:
        raise NotImplementedError


class ContextualBandit(Env):
    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self.obs_dim = spec.n_contexts
        self.n_actions = spec.n_actions
        layout = np.random.default_rng(spec.layout_seed)
        if spec.n_contexts <= spec.n_actions:
            arms = layout.permutation(spec.n_actions)[: spec.n_contexts]
        else:
            arms = layout.integers(spec.n_actions, size=spec.n_contexts)
        self.designated_arms = tuple(int(a) for a in arms)
        self.context = 0

    def observation(self, context: int) -> np.ndarray:
        obs = np.zeros(self.obs_dim)
        obs[context] = 1.0
        return obs

    def _reset(self) -> np.ndarray:
        self.context = int(self.rng.integers(self.spec.n_contexts))
        return self.observation(self.context)

    def _step(self, action: int) -> tuple[np.ndarray, float, bool]:
        reward = 1.0 if action == self.designated_arms[self.context] else 0.0
        return self.observation(self.context), reward, True

    def optimal_expected_return(self) -> float:
        return 1.0


class Catch(Env):
    LEFT, STAY, RIGHT = 0, 1, 2

    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self.size = spec.grid_size
        self.obs_dim = self.size * self.size + self.size
        self.n_actions = 3
        self.ball_row = 0
        self.ball_col = 0
        self.paddle_col = self.size // 2

    def observation(self) -> np.ndarray:
        obs = np.zeros(self.obs_dim)
        obs[self.ball_row * self.size + self.ball_col] = 1.0
        obs[self.size * self.size + self.paddle_col] = 1.0
        return obs

    def _reset(self) -> np.ndarray:
        self.ball_row = 0
        self.ball_col = int(self.rng.integers(self.size))
        self.paddle_col = self.size // 2
        return self.observation()

    def _step(self, action: int) -> tuple[np.ndarray, float, bool]:
        self.paddle_col = min(max(self.paddle_col + action - 1, 0), self.size - 1)
        self.ball_row += 1
        if self.ball_row < self.size - 1:
            return self.observation(), 0.0, False
        reward = 1.0 if self.paddle_col == self.ball_col else -1.0
        return self.observation(), reward, True

    def optimal_expected_return(self) -> float:
        # The paddle starts at the centre and has size - 1 moves, enough for
        # any column when size >= 3.
        return 1.0


class DelayLab(Env):
    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self.obs_dim = spec.obs_dim
        self.n_actions = spec.n_actions
        self._zeros = np.zeros(self.obs_dim)

    def _reset(self) -> np.ndarray:
        return self._zeros.copy()

    def _step(self, action: int) -> tuple[np.ndarray, float, bool]:
        busy_wait(self.spec.step_delay_us)
        return self._zeros.copy(), 0.0, self.step_index + 1 >= self.spec.episode_len


_SPIN_CHUNK = 2048


def busy_wait(microseconds: float) -> None:
    """Burn ``microseconds`` of this thread's CPU time.

    The work is a numpy ufunc, which runs with the GIL released, so the spin
    occupies a core the way an out-of-process simulator would without
    stalling the interpreter for the other workers. Measuring the budget in
    thread CPU time means oversubscribed cores stretch the wall-clock step,
    as they would for a real CPU-bound simulator.
    """
    deadline = time.thread_time() + microseconds * 1e-6
    src = np.ones(_SPIN_CHUNK)
    out = np.empty(_SPIN_CHUNK)
    while time.thread_time() < deadline:
        np.sin(src, out=out)


_CLASSES = {"contextual_bandit": ContextualBandit, "catch": Catch, "delay_lab": DelayLab}


def make_env(spec: EnvSpec) -> Env:
    return _CLASSES[spec.kind](spec)
