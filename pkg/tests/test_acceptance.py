"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``. The lines are printed as
each test finishes and again in the terminal summary. The budget audit runs
last because it also covers the traces produced by the earlier simulations.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.stats import binomtest

from clusterlcbwk.agent import BASELINES, RunConfig, _Recorder, _streams, explore_and_cluster
from clusterlcbwk.agent import run_cluster_lcbwk
from clusterlcbwk.benchmark import oracle_opt
from clusterlcbwk.cluster import (ClusteringConfig, center_errors, classifier_lasso_gradient,
                                  classifier_lasso_objective, clustering_error, match_labels)
from clusterlcbwk.env import NO_OP, BudgetLedger, InstanceConfig, generate_instance
from clusterlcbwk.estimate import reward_radius
from clusterlcbwk.exceptions import ValidationError
from clusterlcbwk.harness import parse_config, run_replication
from clusterlcbwk.lp import LpProblem, LpStatus, lp_solve
from clusterlcbwk.omd import hindsight_best, omd_init, omd_step
from clusterlcbwk.testing import MeasurementErrorFixture, ellipsoid_covers, vertex_enumeration

# every simulated trace is audited for budget semantics in the last test
AUDIT = {"runs": 0, "failures": []}


def budget_semantics_ok(trace) -> bool:
    """The run stops at the first period whose pull crosses B and records nothing after."""
    if len(trace.arms) != trace.T_omega or trace.T_omega > trace.T:
        return False
    if trace.T_omega == 0:
        return not trace.stopped
    cum = np.cumsum(trace.consumption, axis=0)
    crossed = np.flatnonzero(np.any(cum >= trace.B, axis=1))
    if trace.stopped:
        return crossed.size > 0 and crossed[0] == trace.T_omega - 1
    return crossed.size == 0 and trace.T_omega == trace.T


def audit(trace, label):
    AUDIT["runs"] += 1
    if not budget_semantics_ok(trace):
        AUDIT["failures"].append(label)


def test_criterion_01_ellipsoid_coverage(acceptance):
    m, zeta, t, reps = 3, 0.1, 500, 400
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    freq = {}
    for eps in (0.0, 0.05):
        covered = 0
        for _ in range(reps):
            mu = rng.random(m)
            mu /= max(1.0, mu.sum())
            fixture = MeasurementErrorFixture(rng.uniform(-1, 1, m), eps)
            X = rng.random((t, m))
            y = fixture.sample(mu, X, rng)

            def radius(t_c, eps=eps, R=fixture.R):
                return reward_radius(t_c, m, zeta, eps_hat=eps, R=R)

            covered += ellipsoid_covers(mu, X, y, radius)
        freq[eps] = covered / reps
    elapsed = time.perf_counter() - start
    passed = min(freq.values()) >= 1 - zeta and elapsed < 120
    acceptance(1, passed, f"coverage eps=0: {freq[0.0]:.3f}, eps=0.05: {freq[0.05]:.3f} "
                          f"(need >= 0.90), {elapsed:.0f}s")
    assert passed


def test_criterion_02_sum_of_norms(acceptance):
    # 10 runs per m; T = 5000 keeps every cluster count at or below 5000
    violations, runs, steps = 0, 0, 0
    for m in (2, 5):
        for s in range(10):
            inst = generate_instance(
                InstanceConfig(K=20, C=2, m=m, d=2, separation=0.3, noise_half_width=0.1),
                np.random.default_rng(100 + s))
            cfg = RunConfig(T=5000, B=5000.0, clustering=ClusteringConfig(delta=0.25))
            trace = run_cluster_lcbwk(inst, cfg, np.random.default_rng(200 + s), opt_total=0.0)
            audit(trace, f"sum-of-norms m={m} run={s}")
            violations += trace.norm_sum_violations
            runs += 1
            steps += trace.T_omega
    passed = violations == 0
    acceptance(2, passed, f"{violations} violating steps over {runs} runs ({steps} periods)")
    assert passed


def _payoff_sequence(rng, d, horizon):
    """Random payoffs in [-1, 1]^d; odd draws switch the leading coordinate midway."""
    drift = rng.uniform(-0.5, 0.5, size=d)
    noise = 0.5 * rng.uniform(-1, 1, size=(horizon, d))
    P = noise + drift
    if rng.random() < 0.5:
        P[horizon // 2:] -= 2 * drift
    return np.clip(P, -1, 1)


def test_criterion_03_omd_regret(acceptance):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    trials, bad, worst = 0, 0, 0.0
    for d in (2, 8):
        for horizon in (1_000, 4_000, 16_000):
            bound = 2.5 * math.sqrt(horizon * math.log(d + 1))
            for _ in range(100):
                P = _payoff_sequence(rng, d, horizon)
                state = omd_init(d, horizon)
                earned = 0.0
                for g in P:
                    earned += float(state.theta @ g)
                    state = omd_step(state, g)
                _, best = hindsight_best(P)
                trials += 1
                bad += best - earned > bound
                worst = max(worst, (best - earned) / bound)
    elapsed = time.perf_counter() - start
    passed = bad == 0 and elapsed < 60
    acceptance(3, passed, f"{trials - bad}/{trials} within bound, worst regret/bound "
                          f"{worst:.3f}, {elapsed:.0f}s")
    assert passed


def test_criterion_04_lp_equivalence(acceptance):
    rng = np.random.default_rng(4)
    agree = 0
    for _ in range(200):
        n, k = rng.integers(1, 5, size=2)
        c = rng.normal(size=n)
        A = rng.normal(size=(k, n))
        b = rng.normal(size=k)
        u = rng.uniform(0.5, 2.0, size=n)
        res = lp_solve(LpProblem(c, A, b, u))
        best, _ = vertex_enumeration(c, A, b, u)
        if best is None:
            agree += res.status == LpStatus.INFEASIBLE
        else:
            agree += res.status == LpStatus.OPTIMAL and abs(res.value - best) <= 1e-6
    passed = agree == 200
    acceptance(4, passed, f"{agree}/200 LPs match vertex enumeration")
    assert passed


def test_criterion_05_clustering_accuracy(acceptance):
    start = time.perf_counter()
    eps_max, center_max = [], []
    for s in range(50):
        inst = generate_instance(
            InstanceConfig(K=120, C=3, m=5, d=1, separation=0.5, noise_half_width=0.1),
            np.random.default_rng(s))
        cfg = RunConfig(T=10_000, B=10_000.0, n_subset=60, T0=60)
        streams = _streams(cfg, np.random.default_rng(1000 + s))
        phase = explore_and_cluster(inst, cfg, streams, BudgetLedger(cfg.B, d=1),
                                    _Recorder(cfg.T, 1))
        true = inst.memberships[phase.subset] + 1
        mapping = match_labels(phase.labels, true, inst.C)
        eps_max.append(np.max(clustering_error(phase.labels, true, inst.C)))
        center_max.append(np.max(center_errors(phase.clustering.centers, inst.mu, mapping)))
    elapsed = time.perf_counter() - start
    mean_eps, mean_center = float(np.mean(eps_max)), float(np.mean(center_max))
    passed = mean_eps <= 0.05 and mean_center <= 0.05 and elapsed < 300
    acceptance(5, passed, f"mean max eps_c {mean_eps:.4f}, mean max center error "
                          f"{mean_center:.4f} (worst {max(center_max):.4f}), {elapsed:.0f}s")
    assert passed


SUBLINEAR_TOML = """
[instance]
K = 40
C = 2
m = 3
d = 2
separation = 0.5
noise_half_width = 0.1

[run]
T = 32000
budget_fraction = 0.6

[clustering]
delta = 0.25

[experiment]
seed = 7
replications = 30
T_grid = [2000, 8000, 32000]
baselines = ["cluster_lcbwk", "single_cluster_lcbwk"]
timing = false
"""


def test_criterion_07_sublinearity(acceptance):
    cfg = parse_config(SUBLINEAR_TOML)
    start = time.perf_counter()
    regret = {b: np.zeros((cfg.replications, len(cfg.T_grid))) for b in cfg.baselines}
    for r in range(cfg.replications):
        for j, T in enumerate(cfg.T_grid):
            _, _, rows, traces = run_replication(cfg, r, T)
            for row, trace in zip(rows, traces):
                regret[row["baseline"]][r, j] = row["regret"]
                audit(trace, f"sublinearity {row['baseline']} r={r} T={T}")
    elapsed = time.perf_counter() - start

    grid = np.array(cfg.T_grid, float)
    mean = regret["cluster_lcbwk"].mean(axis=0)
    ratios = mean[1:] / mean[:-1]
    per_period = mean / grid
    ratio_ok = bool(np.all(ratios <= 4 ** 0.9))
    decreasing = bool(np.all(np.diff(per_period) < 0))

    ours, single = regret["cluster_lcbwk"][:, -1], regret["single_cluster_lcbwk"][:, -1]
    wins, losses = int(np.sum(ours < single)), int(np.sum(ours > single))
    p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    beats_single = ours.mean() <= single.mean() and p < 0.1
    passed = ratio_ok and decreasing and beats_single and elapsed < 1200
    acceptance(7, passed,
               f"ratios {ratios[0]:.2f}, {ratios[1]:.2f} (need <= {4 ** 0.9:.2f}); "
               f"regret/T {', '.join(f'{v:.4f}' for v in per_period)}; "
               f"cluster {ours.mean():.1f} vs single {single.mean():.1f} at T={cfg.T_grid[-1]}, "
               f"sign test {wins}-{losses} p={p:.3g}; {elapsed:.0f}s")
    assert passed


def test_criterion_08_opt_hat_consistency(acceptance):
    start = time.perf_counter()
    shrinks = 0
    rel = np.zeros((50, 2))
    for s in range(50):
        inst = generate_instance(
            InstanceConfig(K=60, C=2, m=3, d=2, separation=0.5, noise_half_width=0.0),
            np.random.default_rng(s))
        T = 20_000
        B = 0.3 * T
        opt = oracle_opt(inst, B, T, 2000, np.random.default_rng(5000 + s))
        for j, n in enumerate((20, 60)):
            cfg = RunConfig(T=T, B=B, n_subset=n, T0=n)
            streams = _streams(cfg, np.random.default_rng(1000 + s))
            phase = explore_and_cluster(inst, cfg, streams, BudgetLedger(B, d=2), _Recorder(T, 2))
            rel[s, j] = abs(phase.opt_hat - opt) / opt
        shrinks += rel[s, 1] < rel[s, 0]
    elapsed = time.perf_counter() - start
    passed = shrinks >= 40 and elapsed < 300
    acceptance(8, passed, f"error shrinks in {shrinks}/50 pairs (need >= 40); mean relative "
                          f"error {rel[:, 0].mean():.4f} -> {rel[:, 1].mean():.4f}, {elapsed:.0f}s")
    assert passed


def test_criterion_09_gradient(acceptance):
    rng = np.random.default_rng(9)
    h = 1e-5
    worst = 0.0
    for _ in range(20):
        N, T0, m, C = rng.integers(3, 9), rng.integers(4, 12), rng.integers(1, 5), rng.integers(2, 4)
        X = rng.random((N, T0, m))
        r = rng.random((N, T0))
        per_arm = rng.normal(size=(N, m))
        centers = rng.normal(size=(C, m))
        lam = rng.uniform(0.05, 1.0)
        g_arm, g_center = classifier_lasso_gradient(per_arm, centers, X, r, lam)
        analytic = np.concatenate([g_arm.ravel(), g_center.ravel()])
        theta = np.concatenate([per_arm.ravel(), centers.ravel()])

        def f(v):
            return classifier_lasso_objective(v[:N * m].reshape(N, m), v[N * m:].reshape(C, m),
                                              X, r, lam)

        numeric = np.array([(f(theta + h * e) - f(theta - h * e)) / (2 * h)
                            for e in np.eye(theta.size)])
        worst = max(worst, np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric)))
    passed = worst <= 1e-5
    acceptance(9, passed, f"max relative gradient error {worst:.2e} over 20 points")
    assert passed


PINNED_TOML = """
[instance]
K = 16
C = 2
m = 2
d = 2
separation = 0.3
noise_half_width = 0.1

[run]
T = 1500
budget_fraction = 0.5

[clustering]
delta = 0.2

[experiment]
seed = 11
replications = 3
n_mc_opt = 200
T_grid = [500, 1500]
timing = false
"""


def test_criterion_10_determinism(acceptance, tmp_path):
    config = tmp_path / "pinned.toml"
    config.write_text(PINNED_TOML)
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        proc = subprocess.run([sys.executable, "-m", "clusterlcbwk", "simulate", str(config),
                               "--out", str(out), "--quiet"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outputs.append((out / "summary.csv").read_bytes())
    rows = outputs[0].count(b"\n") - 1
    passed = outputs[0] == outputs[1] and rows > 0
    acceptance(10, passed, f"summary.csv identical across two processes "
                           f"({len(outputs[0])} bytes, {rows} rows)")
    assert passed


def test_criterion_06_budget_feasibility(acceptance):
    # a battery over every baseline, tight to loose budgets and both noop settings
    for s in range(12):
        d = 1 + s % 3
        inst = generate_instance(
            InstanceConfig(K=14, C=2, m=3, d=d, separation=0.3, noise_half_width=0.2),
            np.random.default_rng(300 + s))
        for baseline in BASELINES:
            for fraction in (0.2, 0.45, 1.0):
                cfg = RunConfig(T=1200, B=fraction * 1200, baseline=baseline,
                                allow_noop_in_argmax=bool(s % 2),
                                clustering=ClusteringConfig(delta=0.2))
                try:
                    trace = run_cluster_lcbwk(inst, cfg, np.random.default_rng(400 + s),
                                              opt_total=0.0)
                except ValidationError as exc:  # a budget below N_S T0 is rejected up front
                    assert "N_S T_0" in str(exc)
                    continue
                audit(trace, f"battery {baseline} s={s} B={cfg.B}")
                assert np.all((trace.arms == NO_OP) | np.isin(trace.arms, trace.subset))
    failures = AUDIT["failures"]
    passed = not failures and AUDIT["runs"] > 0
    acceptance(6, passed, f"{len(failures)} budget-semantics violations over {AUDIT['runs']} "
                          f"audited runs")
    assert passed
