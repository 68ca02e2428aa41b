"""End-to-end acceptance checks, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints
one PASS/FAIL line per criterion with the measured quantities.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from batchac.annealer import AnnealDriver, AnnealState
from batchac.envs import ContextualBandit, EnvSpec
from batchac.metrics import read_frames, updates_from_frames
from batchac.nnet import (
    Hyperparams,
    ModelState,
    NetworkSpec,
    forward,
    greedy_actions,
    head_gradients,
    loss_and_gradients,
)
from batchac.pipeline import KnobConfig, StopCondition, default_agent_count, run
from batchac.reference import SyncConfig, train_sync
from batchac.returns import MergedBatch, compute_returns
from batchac.studies import lag_study, measure_throughput, steady_rates

pytestmark = pytest.mark.acceptance

CATCH5 = EnvSpec(kind="catch", grid_size=5)
BANDIT = EnvSpec(kind="contextual_bandit", n_contexts=4, n_actions=4)
DELAY_LAB = EnvSpec(kind="delay_lab", step_delay_us=500.0)


@pytest.fixture
def detail(record_property):
    def note(text):
        record_property("detail", text)
    return note


def _batch(states, actions, returns):
    return MergedBatch(np.asarray(states, float), np.asarray(actions), np.asarray(returns, float),
                       np.zeros(len(actions), dtype=np.int64))


def _reference_loss(theta, spec, hyper, batch, advantage):
    layers, offset = [], 0
    for fan_in, fan_out in spec.layer_shapes():
        w = theta[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        layers.append((w, theta[offset:offset + fan_out]))
        offset += fan_out
    total = 0.0
    for x, a, R, adv in zip(batch.states, batch.actions, batch.returns, advantage):
        h = x
        for w, b in layers[:-2]:
            h = np.maximum(h @ w + b, 0.0)
        z = h @ layers[-2][0] + layers[-2][1]
        p = np.exp(z - z.max())
        p /= p.sum()
        v = float((h @ layers[-1][0] + layers[-1][1])[0])
        total += -math.log(p[a] + hyper.eps_log) * adv
        total += hyper.beta * float(np.sum(p * np.log(p + hyper.eps_log)))
        total += hyper.value_loss_weight * (R - v) ** 2
    return total


def test_c01_gradient_oracle(detail):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, instances = 0.0, 0
    while instances < 24:
        input_dim, n_actions = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        hidden = tuple(int(h) for h in rng.integers(1, 8, size=rng.integers(1, 3)))
        spec = NetworkSpec(input_dim, hidden, n_actions)
        if spec.n_params > 200:
            continue
        instances += 1
        n = int(rng.integers(1, 9))
        theta = rng.normal(scale=0.7, size=spec.n_params)
        batch = _batch(rng.normal(size=(n, input_dim)), rng.integers(n_actions, size=n), rng.normal(size=n) * 2)
        hyper = Hyperparams(beta=float(rng.uniform(0, 0.2)), eps_log=1e-6)
        analytic = loss_and_gradients(ModelState(theta), spec, hyper, batch).dtheta
        _, values = forward(ModelState(theta), spec, batch.states)
        adv = batch.returns - values
        numeric = np.empty_like(theta)
        h = 1e-6
        for i in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            numeric[i] = (_reference_loss(tp, spec, hyper, batch, adv)
                          - _reference_loss(tm, spec, hyper, batch, adv)) / (2 * h)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    detail(f"instances={instances} worst_rel_err={worst:.2e} runtime={elapsed:.2f}s")
    assert worst < 1e-4
    assert elapsed < 10.0


def test_c02_epsilon_stabilization(detail):
    t0 = time.perf_counter()
    # One ReLU unit copies x; logits are (+1000 h, -1000 h) so action 1 has probability 0.
    spec = NetworkSpec(1, (1,), 2)
    theta = np.array([1.0, 0.0, 1000.0, -1000.0, 0.0, 0.0, 0.5, 0.0])
    eps = 1e-6
    hyper = Hyperparams(eps_log=eps)
    policies, values = forward(ModelState(theta), spec, [[1.0]])
    R = 3.0
    packet = loss_and_gradients(ModelState(theta), spec, hyper, _batch([[1.0]], [1], [R]))
    _, _, dprobs, *_ = head_gradients(policies, values, np.array([1]), np.array([R]),
                                      Hyperparams(eps_log=eps, beta=0.0))
    bound = abs(R - values[0]) / eps
    magnitude = float(np.abs(dprobs).max())
    elapsed = time.perf_counter() - t0
    detail(f"p_a={policies[0, 1]} |dL/dp_a|={magnitude:.3e} bound={bound:.3e} "
           f"finite={bool(np.all(np.isfinite(packet.dtheta)))} runtime={elapsed * 1e3:.1f}ms")
    assert policies[0, 1] == 0.0
    assert np.all(np.isfinite(packet.dtheta)) and np.isfinite(packet.policy_loss)
    assert magnitude <= bound * (1 + 1e-12)
    with np.errstate(divide="ignore"):
        assert not np.isfinite(-np.log(policies[0, 1]))  # what the unstabilized loss would hit
    assert elapsed < 1.0


def test_c03_return_oracle(detail):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 65))
        rewards = rng.normal(size=k)
        gamma = float(rng.choice([0.5, 0.9, 0.99]))
        terminal = bool(rng.integers(2))
        bootstrap = float(rng.normal())
        seed = 0.0 if terminal else bootstrap
        direct = [sum(gamma ** i * rewards[j + i] for i in range(k - j)) + gamma ** (k - j) * seed
                  for j in range(k)]
        worst = max(worst, float(np.max(np.abs(compute_returns(rewards, terminal, bootstrap, gamma) - direct))))
    detail(f"sequences=1000 max_abs_err={worst:.2e}")
    assert worst <= 1e-12


def test_c04_pipeline_equals_sync(detail):
    t0 = time.perf_counter()
    hyper = Hyperparams()
    sync, piped = [], []
    train_sync(SyncConfig(hyper, CATCH5, max_updates=500, seed=11),
               on_update=lambda m: sync.append(m.theta.tobytes()))
    run(KnobConfig(1, 1, 1, min_train_batch=1), hyper, CATCH5, StopCondition(max_updates=500),
        seed=11, serialized=True, on_update=lambda m: piped.append(m.theta.tobytes()))
    elapsed = time.perf_counter() - t0
    first_diff = next((i for i, (a, b) in enumerate(zip(sync, piped)) if a != b), None)
    detail(f"updates sync={len(sync)} pipeline={len(piped)} first_mismatch={first_diff} runtime={elapsed:.1f}s")
    assert len(sync) == len(piped) == 500 and first_diff is None
    assert elapsed < 30.0


def _greedy_optimal(model, spec, arms):
    return tuple(greedy_actions(model, spec, np.eye(len(arms)))) == arms


def test_c05_bandit_learning(detail):
    t0 = time.perf_counter()
    arms = ContextualBandit(BANDIT).designated_arms
    hyper = Hyperparams(eta=3e-4)
    solved = {"sync": 0, "pipeline": 0}
    first_hits = {"sync": [], "pipeline": []}
    for seed in range(3):
        for mode in solved:
            hit = []

            def check(model, hit=hit, spec=NetworkSpec(4, (64,), 4)):
                if not hit and model.version % 25 == 0 and _greedy_optimal(model, spec, arms):
                    hit.append(model.version)

            if mode == "sync":
                report = train_sync(SyncConfig(hyper, BANDIT, max_updates=3000, seed=seed), on_update=check)
            else:
                report = run(KnobConfig(), hyper, BANDIT, StopCondition(max_updates=3000), seed=seed,
                             on_update=check)
            if _greedy_optimal(report.final_model, report.net_spec, arms) and not hit:
                hit.append(report.total_updates)
            solved[mode] += bool(hit)
            first_hits[mode].append(hit[0] if hit else None)
    elapsed = time.perf_counter() - t0
    detail(f"solved={solved} first_optimal_update={first_hits} runtime={elapsed:.1f}s")
    assert solved == {"sync": 3, "pipeline": 3}
    assert elapsed < 60.0


def test_c06_catch_learning(detail):
    outcomes = []
    for seed in range(3):
        t0 = time.perf_counter()
        report = run(KnobConfig(), Hyperparams(), CATCH5,
                     StopCondition(target_score=0.9, max_seconds=600.0), seed=seed)
        recent = report.episode_scores[-30:]
        rolling = sum(recent) / len(recent) if len(recent) == 30 else float("nan")
        outcomes.append((seed, rolling >= 0.9, round(rolling, 3), round(time.perf_counter() - t0, 1)))
    passed = sum(ok for _, ok, _, _ in outcomes)
    detail(f"cores={default_agent_count()} (seed, reached, rolling30, seconds)={outcomes}")
    assert passed >= 2


def test_c07_balanced_rate_identity(detail):
    # Every catch(5) episode is 4 steps, so t_max = 4 makes every training
    # batch a full t_max segment: the balanced configuration.
    t_max = 4
    ratios = {}
    for mb in (1, t_max):
        report = run(KnobConfig(min_train_batch=mb), Hyperparams(t_max=t_max), CATCH5,
                     StopCondition(max_seconds=6.0), frame_interval=0.5)
        tps, pps = steady_rates(report)
        ratios[mb] = pps / tps
    detail(f"t_max={t_max} pps/tps by min_batch={ {k: round(v, 3) for k, v in ratios.items()} } "
           f"band=[{0.8 * t_max}, {1.2 * t_max}]")
    assert all(0.8 * t_max <= r <= 1.2 * t_max for r in ratios.values())


def test_c08_annealer_efficacy(detail):
    t0 = time.perf_counter()
    hyper = Hyperparams()
    grid = []
    for a in range(1, 9):
        for p in range(1, 9):
            for t in range(1, 9):
                r = measure_throughput(KnobConfig(a, p, t), hyper, DELAY_LAB, seconds=0.2, warmup=0.1)
                grid.append((r.tps, (a, p, t)))
    grid.sort(reverse=True)
    # A short window inflates the best of 512 noisy samples; re-measure the leaders.
    confirmed = [(measure_throughput(KnobConfig(*w), hyper, DELAY_LAB, seconds=1.5, warmup=0.3).tps, w)
                 for _, w in grid[:8]]
    best_tps, best_knobs = max(confirmed)
    sweep_s = time.perf_counter() - t0

    epochs, epoch_s = 30, 2.0
    driver = AnnealDriver(AnnealState.create(KnobConfig(1, 1, 1), seed=0, epoch_length=epoch_s, ceiling=8),
                          max_epochs=epochs)
    report = run(KnobConfig(1, 1, 1), hyper, DELAY_LAB, StopCondition(max_seconds=(epochs + 1) * epoch_s + 1.0),
                 annealer=driver, frame_interval=epoch_s)
    final = report.final_knobs
    steady = measure_throughput(final, hyper, DELAY_LAB, seconds=3.0, warmup=0.5).tps
    elapsed = time.perf_counter() - t0
    detail(f"grid_best={best_tps:.1f}@{best_knobs} annealed={steady:.1f}@{final.workers} "
           f"ratio={steady / best_tps:.3f} epochs={driver.epochs} sweep={sweep_s:.0f}s runtime={elapsed:.0f}s")
    assert driver.epochs <= epochs
    assert steady >= 0.8 * best_tps
    assert elapsed < 300.0


def test_c09_lag_vs_min_batch(detail):
    # Eight agents keep the training queue occupied, which is where lag arises.
    knobs = KnobConfig(n_agents=8, n_predictors=2, n_trainers=2)
    sizes = (1, 5, 20, 40)
    rows = lag_study(knobs, Hyperparams(), CATCH5, StopCondition(max_seconds=5.0), sizes)
    lags = [row["mean_lag"] for row in rows]
    rho = float(spearmanr(sizes, lags).statistic)
    detail(f"knobs={knobs.workers} mean_lag={dict(zip(sizes, (round(v, 3) for v in lags)))} spearman={rho:.3f}")
    assert rho <= 0


def test_c10_throughput_scaling(detail):
    cores = default_agent_count()
    hyper = Hyperparams()
    one = measure_throughput(KnobConfig(1, 2, 2), hyper, DELAY_LAB, seconds=4.0, warmup=0.5).pps
    many = measure_throughput(KnobConfig(cores, 2, 2), hyper, DELAY_LAB, seconds=4.0, warmup=0.5).pps
    detail(f"cores={cores} pps(1 agent)={one:.1f} pps({cores} agents)={many:.1f} ratio={many / one:.2f}")
    assert many >= 2 * one


def test_c11_metrics_integrity(tmp_path, detail):
    path = tmp_path / "metrics.csv"
    report = run(KnobConfig(), Hyperparams(), CATCH5, StopCondition(max_seconds=3.0),
                 frame_interval=0.1, metrics_out=path)
    frames = read_frames(path)
    recovered = updates_from_frames(frames)
    detail(f"frames={len(frames)} sum(tps*window)={recovered} updates_total={frames[-1].updates_total} "
           f"report={report.total_updates}")
    assert frames == report.frames
    assert recovered == frames[-1].updates_total == report.total_updates
    assert all(f.tps >= 0 and f.pps >= 0 and f.max_lag >= f.mean_lag for f in frames)
    assert [f.updates_total for f in frames] == sorted(f.updates_total for f in frames)
