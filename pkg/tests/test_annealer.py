from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchac.annealer import AnnealDriver, AnnealState, decide, propose
from batchac.pipeline import KnobConfig


def knobs(a, p, t):
    return KnobConfig(n_agents=a, n_predictors=p, n_trainers=t)


def test_propose_from_the_corner():
    state = AnnealState.create(knobs(1, 1, 1), seed=0)
    seen = {propose(state).workers for _ in range(200)}
    assert seen == {(2, 1, 1), (1, 2, 1), (1, 1, 2)}


@settings(max_examples=100, deadline=None)
@given(a=st.integers(1, 8), p=st.integers(1, 8), t=st.integers(1, 8), seed=st.integers(0, 2**32 - 1),
       ceiling=st.sampled_from([None, 8]))
def test_propose_moves_one_knob_by_one(a, p, t, seed, ceiling):
    state = AnnealState.create(knobs(a, p, t), seed=seed, ceiling=ceiling)
    cand = propose(state).workers
    diffs = [c - o for c, o in zip(cand, (a, p, t))]
    assert sorted(abs(d) for d in diffs) == [0, 0, 1]
    assert all(c >= 1 for c in cand)
    if ceiling is not None:
        assert all(c <= ceiling for c in cand)


def test_propose_keeps_batching_limits():
    base = KnobConfig(8, 2, 2, pred_batch_max=7, min_train_batch=20)
    cand = propose(AnnealState.create(base, seed=3))
    assert (cand.pred_batch_max, cand.min_train_batch) == (7, 20)


def test_seeded_proposals_repeat():
    def sequence(seed):
        state = AnnealState.create(knobs(4, 4, 4), seed=seed)
        out = []
        for i in range(30):
            cand = propose(state)
            state, _ = decide(state, cand, float(i % 3))
            out.append(cand.workers)
        return out

    assert sequence(5) == sequence(5)
    assert sequence(5) != sequence(6)


def test_decide_accepts_strict_improvement():
    state = AnnealState.create(knobs(1, 1, 1), baseline_tps=100.0)
    new, ok = decide(state, knobs(2, 1, 1), 110.0)
    assert ok and new.current == knobs(2, 1, 1) and new.baseline_tps == 110.0
    assert new.history[-1].accepted and new.history[-1].tps == 110.0


@pytest.mark.parametrize("measured", [90.0, 100.0])
def test_decide_rejects_and_decays(measured):
    state = AnnealState.create(knobs(1, 1, 1), baseline_tps=100.0)
    new, ok = decide(state, knobs(2, 1, 1), measured)
    assert not ok and new.current == knobs(1, 1, 1)
    assert new.baseline_tps == pytest.approx(99.0)
    assert len(new.history) == 1 and not new.history[0].accepted


def test_history_is_append_only():
    state = AnnealState.create(knobs(1, 1, 1))
    prefix = []
    for i in range(10):
        state, _ = decide(state, propose(state), float(i % 4))
        assert state.history[: len(prefix)] == prefix
        prefix = list(state.history)


def synthetic_tps(workers, noise_rng=None):
    a, p, t = workers
    # Unimodal in each knob, optimum at (6, 3, 2).
    value = 1000.0 / (1 + 0.08 * (a - 6) ** 2) / (1 + 0.15 * (p - 3) ** 2) / (1 + 0.2 * (t - 2) ** 2)
    if noise_rng is not None:
        value *= 1 + 0.01 * noise_rng.standard_normal()
    return value


def test_hill_climb_reaches_synthetic_optimum():
    best = max(synthetic_tps((a, p, t)) for a in range(1, 9) for p in range(1, 9) for t in range(1, 9))
    hits = 0
    for seed in range(50):
        noise = np.random.default_rng(1000 + seed)
        state = AnnealState.create(knobs(1, 1, 1), seed=seed, ceiling=8)
        state = replace(state, baseline_tps=synthetic_tps((1, 1, 1), noise))
        reached = False
        for _ in range(100):
            cand = propose(state)
            state, _ = decide(state, cand, synthetic_tps(cand.workers, noise))
            reached |= synthetic_tps(state.current.workers) >= 0.95 * best
        hits += reached
    assert hits >= 45


def test_driver_epoch_protocol():
    driver = AnnealDriver(AnnealState.create(knobs(1, 1, 1), seed=0, epoch_length=2.0), max_epochs=2)
    assert driver.start(0.0, 0) is None
    assert driver.tick(0.5, 50) is None
    assert driver.tick(1.0, 100) is None        # half mark
    assert driver.tick(1.5, 150) is None
    first = driver.tick(2.0, 200)               # baseline epoch ends: 100 updates / 1 s
    assert driver.state.baseline_tps == pytest.approx(100.0)
    assert first is not None and first.workers != (1, 1, 1)
    driver.tick(3.0, 200)
    second = driver.tick(4.0, 500)              # candidate measured at 300 TPS
    assert driver.state.current == first and driver.state.baseline_tps == pytest.approx(300.0)
    assert second is not None
    driver.tick(5.0, 500)
    final = driver.tick(6.0, 510)               # 10 TPS: rejected, walk ends
    assert driver.done and final == first
    assert driver.tick(100.0, 10_000) is None
    assert [s.accepted for s in driver.history] == [True, True, False]
