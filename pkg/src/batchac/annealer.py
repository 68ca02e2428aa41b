"""Random +/-1 walk over worker counts, kept or reverted on measured TPS."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .pipeline import KnobConfig

KNOBS = ("n_agents", "n_predictors", "n_trainers")
DEFAULT_DECAY = 0.01


@dataclass(frozen=True)
class AnnealStep:
    knobs: KnobConfig
    tps: float
    accepted: bool


@dataclass
class AnnealState:
    current: KnobConfig
    baseline_tps: float = 0.0
    epoch_length: float = 60.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    history: list[AnnealStep] = field(default_factory=list)
    ceiling: int | None = None
    decay: float = DEFAULT_DECAY

    @classmethod
    def create(cls, knobs: KnobConfig, seed: int = 0, **kwargs) -> "AnnealState":
        return cls(current=knobs, rng=np.random.default_rng(seed), **kwargs)


def _legal(value: int, ceiling: int | None) -> bool:
    return value >= 1 and (ceiling is None or value <= ceiling)


def propose(state: AnnealState) -> KnobConfig:
    """Move one uniformly chosen knob by +/-1, resampling illegal moves."""
    while True:
        name = KNOBS[int(state.rng.integers(3))]
        step = 1 if state.rng.integers(2) else -1
        value = getattr(state.current, name) + step
        if _legal(value, state.ceiling):
            return replace(state.current, **{name: value})


def decide(state: AnnealState, candidate: KnobConfig, measured_tps: float) -> tuple[AnnealState, bool]:
    """Keep ``candidate`` only if it strictly beats the baseline.

    A rejection leaves the knobs alone and decays the baseline by
    ``state.decay`` so an unusually lucky early measurement cannot freeze
    the walk.
    """
    accepted = measured_tps > state.baseline_tps
    history = [*state.history, AnnealStep(candidate, measured_tps, accepted)]
    if accepted:
        return replace(state, current=candidate, baseline_tps=measured_tps, history=history), True
    return replace(state, baseline_tps=state.baseline_tps * (1.0 - state.decay), history=history), False


class AnnealDriver:
    """Epoch clock wiring :func:`propose`/:func:`decide` into a running pipeline.

    Each epoch runs one configuration. TPS is measured over the second half
    of the epoch only, after the reconfiguration has settled. The first epoch
    measures the starting configuration to seed the baseline.
    """

    def __init__(self, state: AnnealState, max_epochs: int | None = None):
        self.state = state
        self.max_epochs = max_epochs
        self.epochs = 0
        self.candidate: KnobConfig | None = None
        self._epoch_start = 0.0
        self._half_mark: tuple[float, int] | None = None
        self.done = False

    @property
    def history(self) -> list[AnnealStep]:
        return self.state.history

    def start(self, now: float, updates_total: int) -> KnobConfig | None:
        self._epoch_start = now
        self._half_mark = None
        return None

    def tick(self, now: float, updates_total: int) -> KnobConfig | None:
        if self.done:
            return None
        length = self.state.epoch_length
        if self._half_mark is None:
            if now - self._epoch_start >= length / 2:
                self._half_mark = (now, updates_total)
            return None
        if now - self._epoch_start < length:
            return None

        t0, u0 = self._half_mark
        tps = (updates_total - u0) / (now - t0) if now > t0 else 0.0
        if self.candidate is None:
            self.state = replace(
                self.state,
                baseline_tps=tps,
                history=[*self.state.history, AnnealStep(self.state.current, tps, True)],
            )
        else:
            self.state, _ = decide(self.state, self.candidate, tps)
            self.epochs += 1

        self._epoch_start = now
        self._half_mark = None
        if self.max_epochs is not None and self.epochs >= self.max_epochs:
            self.done = True
            self.candidate = None
            return self.state.current
        self.candidate = propose(self.state)
        return self.candidate
