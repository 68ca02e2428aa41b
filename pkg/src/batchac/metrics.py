"""Throughput, staleness and score accounting with periodic CSV frames."""

from __future__ import annotations

import csv
import dataclasses
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

SCORE_WINDOW = 30


@dataclass(frozen=True)
class MetricsFrame:
    wall_time_s: float
    tps: float
    pps: float
    mean_lag: float
    max_lag: float
    train_queue_len: float
    pred_batch_mean: float
    n_a: int
    n_p: int
    n_t: int
    episodes: int
    score_mean: float
    score_max: float
    updates_total: int


FRAME_FIELDS = tuple(f.name for f in dataclasses.fields(MetricsFrame))
_INT_FIELDS = {f.name for f in dataclasses.fields(MetricsFrame) if f.type in (int, "int")}


class MetricsCollector:
    """Thread-safe counters fed by workers and drained by ``snapshot``.

    Per-window counters reset on every snapshot; ``*_total`` counters and the
    episode log are cumulative.
    """

    def __init__(self, clock=time.perf_counter, score_window: int = SCORE_WINDOW):
        self._clock = clock
        self._lock = threading.Lock()
        self.score_window = score_window
        self.start_time = clock()
        self._window_start = self.start_time

        self.updates_total = 0
        self.predictions_total = 0
        self.experiences_trained = 0
        self.experiences_produced = 0
        self.experiences_dropped = 0
        self.rejected_updates = 0
        self.episode_scores: list[float] = []
        self.lag_histogram: Counter[int] = Counter()
        self.knobs = (0, 0, 0)

        self._recent_scores: deque[float] = deque(maxlen=score_window)
        self._reset_window()

    def _reset_window(self) -> None:
        self._w_updates = 0
        self._w_predictions = 0
        self._w_pred_batches: list[int] = []
        self._w_lag_sum = 0
        self._w_lag_count = 0
        self._w_lag_max = 0
        self._w_queue_samples: list[int] = []

    def record_update(self, n_experiences: int, lags: Iterable[int]) -> None:
        lags = [int(k) for k in lags]
        with self._lock:
            self.updates_total += 1
            self._w_updates += 1
            self.experiences_trained += n_experiences
            self.lag_histogram.update(lags)
            if lags:
                self._w_lag_sum += sum(lags)
                self._w_lag_count += len(lags)
                self._w_lag_max = max(self._w_lag_max, max(lags))

    def record_prediction_batch(self, size: int) -> None:
        with self._lock:
            self.predictions_total += size
            self._w_predictions += size
            self._w_pred_batches.append(size)

    def record_episode(self, score: float) -> None:
        with self._lock:
            self.episode_scores.append(float(score))
            self._recent_scores.append(float(score))

    def record_queue_length(self, length: int) -> None:
        with self._lock:
            self._w_queue_samples.append(length)

    def record_produced(self, n: int) -> None:
        with self._lock:
            self.experiences_produced += n

    def record_dropped(self, n: int) -> None:
        with self._lock:
            self.experiences_dropped += n

    def record_rejected_update(self, n_experiences: int) -> None:
        with self._lock:
            self.rejected_updates += 1
            self.experiences_dropped += n_experiences

    def set_knobs(self, n_a: int, n_p: int, n_t: int) -> None:
        with self._lock:
            self.knobs = (n_a, n_p, n_t)

    @property
    def episodes(self) -> int:
        return len(self.episode_scores)

    def rolling_score(self) -> float | None:
        with self._lock:
            if not self._recent_scores:
                return None
            return sum(self._recent_scores) / len(self._recent_scores)

    def lag_summary(self) -> tuple[float, int]:
        """Mean and max lag over every update recorded so far."""
        with self._lock:
            n = sum(self.lag_histogram.values())
            if n == 0:
                return 0.0, 0
            total = sum(k * c for k, c in self.lag_histogram.items())
            return total / n, max(self.lag_histogram)

    def snapshot(self, now: float | None = None) -> MetricsFrame:
        now = self._clock() if now is None else now
        with self._lock:
            window = now - self._window_start

            def rate(count: int) -> float:
                return count / window if window > 0 else 0.0

            recent = list(self._recent_scores)
            frame = MetricsFrame(
                wall_time_s=now - self.start_time,
                tps=rate(self._w_updates),
                pps=rate(self._w_predictions),
                mean_lag=self._w_lag_sum / self._w_lag_count if self._w_lag_count else 0.0,
                max_lag=float(self._w_lag_max),
                train_queue_len=(
                    sum(self._w_queue_samples) / len(self._w_queue_samples)
                    if self._w_queue_samples else 0.0
                ),
                pred_batch_mean=(
                    sum(self._w_pred_batches) / len(self._w_pred_batches)
                    if self._w_pred_batches else 0.0
                ),
                n_a=self.knobs[0],
                n_p=self.knobs[1],
                n_t=self.knobs[2],
                episodes=len(self.episode_scores),
                score_mean=sum(recent) / len(recent) if recent else 0.0,
                score_max=max(recent) if recent else 0.0,
                updates_total=self.updates_total,
            )
            self._window_start = now
            self._reset_window()
        return frame


def write_frames(path: str | Path, frames: Sequence[MetricsFrame]) -> None:
    """Write a header plus one row per frame; floats use ``repr`` so they round-trip."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FRAME_FIELDS)
        for frame in frames:
            writer.writerow([repr(getattr(frame, name)) for name in FRAME_FIELDS])


def read_frames(path: str | Path) -> list[MetricsFrame]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != FRAME_FIELDS:
            raise ValueError(f"unexpected metrics header: {header}")
        return [
            MetricsFrame(**{
                name: int(value) if name in _INT_FIELDS else float(value)
                for name, value in zip(header, row)
            })
            for row in reader
        ]


def updates_from_frames(frames: Sequence[MetricsFrame]) -> int:
    """Recover the update count from rates times window lengths."""
    total = 0.0
    previous = 0.0
    for frame in frames:
        total += frame.tps * (frame.wall_time_s - previous)
        previous = frame.wall_time_s
    return round(total)
