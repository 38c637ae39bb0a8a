"""Fast invariant checks behind the ``selftest`` subcommand."""

from __future__ import annotations

import math
import traceback

import numpy as np

from .agent import RunConfig, run_cluster_lcbwk
from .cluster import (ClusteringConfig, classifier_lasso_fit, classifier_lasso_gradient,
                      classifier_lasso_objective, clustering_error)
from .env import NO_OP, InstanceConfig, generate_instance
from .estimate import ClusterEstimate, optimistic_reward
from .lp import LpProblem, LpStatus, lp_solve
from .omd import hindsight_best, omd_init, omd_step
from .testing import vertex_enumeration


def check_lp_matches_vertex_enumeration(rng, n_problems=50):
    for _ in range(n_problems):
        n, k = rng.integers(1, 5, size=2)
        c = rng.normal(size=n)
        A = rng.normal(size=(k, n))
        b = rng.normal(size=k)
        u = rng.uniform(0.5, 2.0, size=n)
        res = lp_solve(LpProblem(c, A, b, u))
        best, _ = vertex_enumeration(c, A, b, u)
        if best is None:
            assert res.status == LpStatus.INFEASIBLE, res.status
        else:
            assert res.status == LpStatus.OPTIMAL, res.status
            assert abs(res.value - best) <= 1e-6 * (1 + abs(best)), (res.value, best)


def check_omd_domain_and_regret(rng, d=3, horizon=1000):
    state = omd_init(d, horizon)
    payoffs = rng.uniform(-1, 1, size=(horizon, d)) + np.linspace(0, 0.5, d)
    payoffs = np.clip(payoffs, -1, 1)
    earned = 0.0
    for g in payoffs:
        theta = state.theta
        assert np.all(theta >= 0) and theta.sum() <= 1 + 1e-12
        earned += float(theta @ g)
        state = omd_step(state, g)
    _, best = hindsight_best(payoffs)
    assert best - earned <= 2.5 * math.sqrt(horizon * math.log(d + 1))


def check_ridge_inverse(rng, m=4, n=600):
    est = ClusterEstimate(m, 2, 1.0)
    for _ in range(n):
        est.update(rng.random(m), rng.random(), rng.random(2))
    assert np.allclose(est.M_inv, np.linalg.inv(est.M), atol=1e-8)
    assert np.allclose(est.mu_hat, np.linalg.solve(est.M, est.b_r), atol=1e-8)


def check_optimistic_witness(rng, m=3):
    est = ClusterEstimate(m, 1, 1.0)
    for _ in range(50):
        est.update(rng.random(m), rng.random(), (0.0,))
    x = rng.random(m)
    value, beta = optimistic_reward(est, x, 2.0)
    diff = beta - est.mu_hat
    assert abs(math.sqrt(diff @ est.M @ diff) - 2.0) <= 1e-8
    assert abs(value - x @ beta) <= 1e-10


def check_gradient(rng, N=6, T0=8, m=3, C=2, h=1e-5):
    X = rng.random((N, T0, m))
    r = rng.random((N, T0))
    per_arm = rng.normal(size=(N, m))
    centers = rng.normal(size=(C, m))
    g_arm, g_center = classifier_lasso_gradient(per_arm, centers, X, r, 0.3)
    analytic = np.concatenate([g_arm.ravel(), g_center.ravel()])
    theta = np.concatenate([per_arm.ravel(), centers.ravel()])

    def f(v):
        return classifier_lasso_objective(v[:N * m].reshape(N, m), v[N * m:].reshape(C, m),
                                          X, r, 0.3)

    numeric = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        numeric[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    rel = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)
    assert rel <= 1e-5, rel


def check_noise_free_clustering(rng, N=20, T0=30):
    mu = np.array([[0.6, 0.1, 0.1], [0.1, 0.1, 0.6]])
    truth = np.repeat([0, 1], N // 2)
    X = rng.random((N, T0, 3))
    r = np.einsum("atm,am->at", X, mu[truth])
    fit = classifier_lasso_fit(X, r, 2, 0.5 * T0 ** -0.25, ClusteringConfig(), rng)
    assert np.max(clustering_error(fit.labels, truth + 1, 2)) == 0.0


def check_budget_stop(rng):
    inst = generate_instance(InstanceConfig(K=12, C=2, m=2, d=2, separation=0.2,
                                            noise_half_width=0.1),
                             np.random.default_rng(int(rng.integers(2**31))))
    cfg = RunConfig(T=600, B=160, clustering=ClusteringConfig(delta=0.2))
    tr = run_cluster_lcbwk(inst, cfg, np.random.default_rng(1), opt_total=0.0)
    cum = np.cumsum(tr.consumption, axis=0)
    if tr.stopped:
        assert np.any(cum[-1] >= cfg.B)
        assert np.all(cum[:-1] < cfg.B)
    else:
        assert tr.T_omega == cfg.T and np.all(cum[-1] < cfg.B)
    assert np.all((tr.arms == NO_OP) | np.isin(tr.arms, tr.subset))


def check_determinism(rng):
    inst = generate_instance(InstanceConfig(K=10, C=2, m=2, d=1, separation=0.2),
                             np.random.default_rng(3))
    cfg = RunConfig(T=400, B=300, clustering=ClusteringConfig(delta=0.2))
    a = run_cluster_lcbwk(inst, cfg, np.random.default_rng(5), opt_total=0.0)
    b = run_cluster_lcbwk(inst, cfg, np.random.default_rng(5), opt_total=0.0)
    assert np.array_equal(a.arms, b.arms) and np.array_equal(a.rewards, b.rewards)


CHECKS = (
    check_lp_matches_vertex_enumeration,
    check_omd_domain_and_regret,
    check_ridge_inverse,
    check_optimistic_witness,
    check_gradient,
    check_noise_free_clustering,
    check_budget_stop,
    check_determinism,
)


def run_selftest(seed: int = 0, quiet: bool = False) -> bool:
    ok = True
    for check in CHECKS:
        rng = np.random.default_rng(seed)
        name = check.__name__.removeprefix("check_")
        try:
            check(rng)
        except Exception:  # noqa: BLE001 -- report every failure, keep going
            ok = False
            print(f"FAIL {name}")
            if not quiet:
                traceback.print_exc()
        else:
            if not quiet:
                print(f"ok   {name}")
    return ok
