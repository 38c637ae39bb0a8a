"""Benchmarks: the optimal static policy (OPT), its exploration-sample estimate, Z and regret."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .env import Instance, draw_context
from .exceptions import ContractViolation, ValidationError
from .lp import LpProblem, LpStatus, lp_solve


@dataclass
class BenchmarkResult:
    opt_total: float
    opt_hat_total: float
    Z: float
    mc_samples: int
    lp_status: str
    B_prime: float = float("nan")
    T_prime: float = float("nan")


def pareto_mask(rewards, consumption, chunk: int = 512) -> np.ndarray:
    """``n x A`` mask of the arms no other arm of the same period dominates.

    Arm ``b`` dominates ``a`` when it earns at least as much and consumes no
    more of any resource; among exact ties the lowest index survives. Moving
    policy mass onto a dominating arm never hurts the static-policy LP, so
    dropping dominated columns leaves its optimal value unchanged.
    """
    rewards = np.asarray(rewards, float)
    consumption = np.asarray(consumption, float)
    n, A = rewards.shape
    lower = np.tril(np.ones((A, A), bool), -1)  # lower[a, b]: b < a
    keep = np.empty((n, A), bool)
    for lo in range(0, n, chunk):
        r = rewards[lo:lo + chunk]
        v = consumption[lo:lo + chunk]
        # [t, a, b]: b is at least as good as a everywhere
        weak = (r[:, None, :] >= r[:, :, None]) & np.all(v[:, None, :, :] <= v[:, :, None, :], axis=3)
        strict = (r[:, None, :] > r[:, :, None]) | np.any(v[:, None, :, :] < v[:, :, None, :], axis=3)
        keep[lo:lo + chunk] = ~np.any(weak & (strict | lower), axis=2)
    return keep


def static_policy_lp(rewards, consumption, rate: float, scale: float, weights=None,
                     mask=None) -> LpProblem:
    """LP over per-period sub-distributions ``pi[t, a]`` (the rest goes to no-op).

    maximize   scale * sum_t w_t sum_a rewards[t, a] pi[t, a]
    subject to scale * sum_t w_t sum_a consumption[t, a, :] pi[t, a] <= rate
               sum_a pi[t, a] <= 1,  pi >= 0

    ``pi <= 1`` follows from the per-period rows, so no explicit bounds are set.
    With ``mask`` only the flagged ``(t, a)`` columns are kept, in row-major order.
    """
    rewards = np.asarray(rewards, float)
    consumption = np.asarray(consumption, float)
    n, A = rewards.shape
    if consumption.shape[:2] != (n, A):
        raise ValidationError("consumption must be n x A x d")
    d = consumption.shape[2]
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    coef = scale * w[:, None]
    cols = np.ones(n * A, bool) if mask is None else np.asarray(mask, bool).ravel()
    c = (coef * rewards).ravel()[cols]
    budget_rows = sp.csr_matrix((coef[:, :, None] * consumption).reshape(n * A, d)[cols].T)
    period = np.repeat(np.arange(n), A)[cols]
    gub_rows = sp.csr_matrix((np.ones(cols.sum()), (period, np.arange(cols.sum()))),
                             shape=(n, cols.sum()))
    A_ub = sp.vstack([budget_rows, gub_rows], format="csr")
    b_ub = np.concatenate([np.full(d, rate), np.ones(n)])
    return LpProblem(c, A_ub, b_ub)


def _solve_policy(problem: LpProblem):
    res = lp_solve(problem, method="auto")
    if res.status != LpStatus.OPTIMAL:
        raise ContractViolation(f"static-policy LP ended with status {res.status.value}")
    return res


def oracle_opt(instance: Instance, B: float, T: int, n_mc: int, rng: np.random.Generator,
               support=None) -> float:
    """``T * r(pi*)`` by sample-average approximation over ``n_mc`` context draws.

    ``support`` (a list of ``(X, probability)`` pairs) switches to an exact
    computation over a finite context distribution.
    """
    if support is not None:
        Xs = np.stack([np.asarray(X, float) for X, _ in support])
        weights = np.array([p for _, p in support], float)
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValidationError("support probabilities must sum to 1")
    else:
        if n_mc < 1:
            raise ValidationError("n_mc must be at least 1")
        Xs = np.stack([draw_context(instance, rng) for _ in range(n_mc)])
        weights = np.full(n_mc, 1.0 / n_mc)
    return T * per_period_opt(instance, Xs, B / T, weights)


def per_period_opt(instance: Instance, Xs, rate: float, weights=None) -> float:
    """Optimal static-policy value per period over the context samples ``Xs``."""
    Xs = np.asarray(Xs, float)
    n = len(Xs)
    if weights is None:
        weights = np.full(n, 1.0 / n)
    mu = instance.mu[instance.memberships]  # K x m
    W = instance.W[instance.memberships]  # K x m x d
    rewards = np.einsum("skm,km->sk", Xs, mu)
    consumption = np.einsum("skm,kmd->skd", Xs, W)
    problem = static_policy_lp(rewards, consumption, rate, 1.0, weights,
                               mask=pareto_mask(rewards, consumption))
    return _solve_policy(problem).value


def estimate_opt_hat(contexts, labels, estimates, K: int, n_subset: int, T0: int,
                     B: float, T: int) -> float:
    """Exploration-sample estimate of OPT.

    ``contexts`` is ``(N_S*T0) x N_S x m`` (contexts of the sampled arms in
    each exploration period), ``labels`` the 1-based cluster of each sampled
    arm (0 = unassigned, excluded) and ``estimates`` one ridge state per
    cluster, frozen at the end of exploration.
    """
    contexts = np.asarray(contexts, float)
    labels = np.asarray(labels)
    keep = np.flatnonzero(labels > 0)
    if keep.size == 0:
        return 0.0
    MU = np.stack([e.mu_hat for e in estimates])
    WH = np.stack([e.W_hat for e in estimates])
    lab = labels[keep] - 1
    Xk = contexts[:, keep, :]
    rewards = np.einsum("tam,am->ta", Xk, MU[lab])
    consumption = np.einsum("tam,amd->tad", Xk, WH[lab])
    scale = K / (n_subset**2 * T0)
    problem = static_policy_lp(rewards, consumption, B / T, scale,
                               mask=pareto_mask(rewards, consumption))
    res = lp_solve(problem, method="auto")
    if res.status != LpStatus.OPTIMAL:
        # the all-zero policy is always feasible
        raise ContractViolation(f"OPT-hat LP ended with status {res.status.value}")
    return T * res.value


def compute_Z(opt_hat: float, n_subset: int, K: int, B_prime: float) -> float:
    if B_prime <= 0:
        raise ValidationError("B' = B - N_S T_0 must be positive (requires B > N_S T_0)")
    return n_subset * opt_hat / (2.0 * K * B_prime)


def regret(opt_total: float, rewards) -> float:
    return float(opt_total - np.sum(rewards))
