"""Classifier-Lasso clustering of the sampled arms.

The penalized least-squares objective is

    Q = 1/(N T0) sum_a sum_t (r - x.mu_a)^2 / 2 + lambda1/N sum_a prod_c |mu_a - mu_c|

over per-arm vectors ``mu_a`` and ``C`` centers ``mu_c``. An arm is assigned
to cluster ``c`` (1-based) when its vector coincides with center ``c``;
label 0 marks an arm that matches no center.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .exceptions import NumericalError, ValidationError

RIDGE_INIT = 1e-6
ARM_PROX_STEPS = 25
CENTER_STEPS = 50


@dataclass
class ClusteringConfig:
    delta: float = 0.25
    c0: float = 1.0
    lambda1: Union[float, str] = "auto"
    c1: float = 0.5
    max_iter: int = 200
    tol: float = 1e-8
    match_tol: float = 1e-9
    kmeans_restarts: int = 10

    def __post_init__(self):
        if not 0.0 < self.delta < 0.5:
            raise ValidationError(f"delta must lie in (0, 1/2), got {self.delta!r}")
        if self.c0 <= 0 or self.c1 <= 0:
            raise ValidationError("c0 and c1 must be positive")
        if isinstance(self.lambda1, str):
            if self.lambda1 != "auto":
                raise ValidationError(f"lambda1: expected a number or 'auto', got {self.lambda1!r}")
        elif self.lambda1 <= 0:
            raise ValidationError("lambda1 must be positive")
        if self.max_iter < 1 or self.kmeans_restarts < 1:
            raise ValidationError("max_iter and kmeans_restarts must be positive")
        if self.tol <= 0 or self.match_tol <= 0:
            raise ValidationError("tolerances must be positive")

    def resolve_lambda1(self, T0: int) -> float:
        return default_lambda1(T0, self.c1) if self.lambda1 == "auto" else float(self.lambda1)


@dataclass
class ClusteringResult:
    subset: list
    per_arm_params: np.ndarray
    centers: np.ndarray
    labels: np.ndarray
    objective_value: float
    iterations: int
    history: list = field(default_factory=list)
    lambda1: float = float("nan")

    @property
    def empty_clusters(self) -> list:
        """1-based ids of centers that received no arm."""
        C = self.centers.shape[0]
        return [c for c in range(1, C + 1) if not np.any(self.labels == c)]

    def to_dict(self) -> dict:
        return {
            "subset": [int(a) for a in self.subset],
            "per_arm_params": self.per_arm_params.tolist(),
            "centers": self.centers.tolist(),
            "labels": self.labels.astype(int).tolist(),
            "objective_value": self.objective_value,
            "iterations": self.iterations,
            "lambda1": self.lambda1,
            "empty_clusters": self.empty_clusters,
        }


def subset_size(K: int, p_min: float, C: int, T: int, delta: float, c0: float = 1.0) -> int:
    if not 0 < p_min <= 1.0 / C + 1e-12:
        raise ValidationError(f"p_min must lie in (0, 1/C], got {p_min!r}")
    if T < 1:
        raise ValidationError("T must be at least 1")
    raw = c0 / p_min * (T ** delta + math.log(C))
    return int(min(K, math.ceil(raw - 1e-9)))


def sample_subset(K: int, p_min: float, C: int, T: int, delta: float, c0: float,
                  rng: np.random.Generator) -> list:
    """Uniformly sample ``min(K, ceil(c0 (T^delta + ln C) / p_min))`` distinct arms."""
    n = subset_size(K, p_min, C, T, delta, c0)
    return sorted(int(a) for a in rng.choice(K, size=n, replace=False))


def default_lambda1(T0: int, c1: float = 0.5) -> float:
    return c1 * T0 ** -0.25


def _check_data(per_arm_params, X, r):
    X = np.asarray(X, float)
    r = np.asarray(r, float)
    if X.ndim != 3 or r.shape != X.shape[:2]:
        raise ValidationError("expected X of shape (N, T0, m) and r of shape (N, T0)")
    if per_arm_params is not None and np.shape(per_arm_params) != (X.shape[0], X.shape[2]):
        raise ValidationError("per_arm_params must be N x m")
    return X, r


def _distances(per_arm, centers):
    return np.linalg.norm(per_arm[:, None, :] - centers[None, :, :], axis=2)


def classifier_lasso_objective(per_arm_params, centers, X, r, lambda1: float) -> float:
    X, r = _check_data(per_arm_params, X, r)
    per_arm = np.asarray(per_arm_params, float)
    centers = np.atleast_2d(np.asarray(centers, float))
    if centers.shape[1] != X.shape[2]:
        raise ValidationError("centers must be C x m")
    N, T0 = r.shape
    resid = r - np.einsum("atm,am->at", X, per_arm)
    smooth = 0.5 * np.sum(resid**2) / (N * T0)
    penalty = lambda1 / N * np.sum(np.prod(_distances(per_arm, centers), axis=1))
    return float(smooth + penalty)


def _leave_one_out_products(D):
    """``P[a, c] = prod_{c' != c} D[a, c']`` without dividing by zero."""
    N, C = D.shape
    P = np.ones((N, C))
    for c in range(C):
        for k in range(C):
            if k != c:
                P[:, c] *= D[:, k]
    return P


def classifier_lasso_gradient(per_arm_params, centers, X, r, lambda1: float):
    """Gradient of the objective in ``(per_arm_params, centers)``.

    Valid where every arm-center distance is positive.
    """
    X, r = _check_data(per_arm_params, X, r)
    per_arm = np.asarray(per_arm_params, float)
    centers = np.atleast_2d(np.asarray(centers, float))
    N, T0 = r.shape
    resid = r - np.einsum("atm,am->at", X, per_arm)
    g_arm = -np.einsum("atm,at->am", X, resid) / (N * T0)
    diff = per_arm[:, None, :] - centers[None, :, :]
    D = np.linalg.norm(diff, axis=2)
    coef = lambda1 / N * _leave_one_out_products(D) / D  # N x C
    unit = coef[:, :, None] * diff
    g_arm += unit.sum(axis=1)
    g_center = -unit.sum(axis=0)
    return g_arm, g_center


def assign_clusters(per_arm_params, centers, match_tol: float = 1e-9) -> np.ndarray:
    """1-based label of the first center within ``match_tol`` of each arm, else 0."""
    D = _distances(np.atleast_2d(per_arm_params), np.atleast_2d(centers))
    hit = D <= match_tol
    return np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, 0)


def kmeans(points, k: int, rng: np.random.Generator, restarts: int = 10, max_iter: int = 300):
    """Lloyd's algorithm with k-means++ seeding; best inertia over ``restarts``."""
    points = np.asarray(points, float)
    n = len(points)
    best, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = [points[rng.integers(n)]]
        for _ in range(1, k):
            d2 = np.min(((points[:, None] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
            total = d2.sum()
            idx = rng.integers(n) if total == 0 else rng.choice(n, p=d2 / total)
            centers.append(points[idx])
        centers = np.array(centers)
        for _ in range(max_iter):
            assign = np.argmin(((points[:, None] - centers[None]) ** 2).sum(-1), axis=1)
            new = np.array([points[assign == j].mean(0) if np.any(assign == j) else centers[j]
                            for j in range(k)])
            if np.allclose(new, centers, rtol=0, atol=1e-14):
                break
            centers = new
        inertia = np.min(((points[:, None] - centers[None]) ** 2).sum(-1), axis=1).sum()
        if inertia < best_inertia:
            best, best_inertia = centers, inertia
    return best


class _Fit:
    """Block-coordinate state for one classifier-Lasso fit (objective scaled by N)."""

    def __init__(self, X, r, lambda1):
        N, T0, m = X.shape
        self.N, self.T0, self.m = N, T0, m
        self.lam = lambda1
        self.G = np.einsum("atm,atn->amn", X, X) / T0
        self.h = np.einsum("atm,at->am", X, r) / T0
        self.s = 0.5 * np.sum(r**2, axis=1) / T0
        self.L = np.array([max(np.linalg.eigvalsh(G)[-1], 1e-12) for G in self.G])

    def smooth(self, a, beta):
        return 0.5 * beta @ self.G[a] @ beta - self.h[a] @ beta + self.s[a]

    def arm_value(self, a, beta, centers):
        return self.smooth(a, beta) + self.lam * np.prod(np.linalg.norm(centers - beta, axis=1))

    def objective(self, per_arm, centers):
        smooth = sum(self.smooth(a, per_arm[a]) for a in range(self.N))
        pen = self.lam * np.sum(np.prod(_distances(per_arm, centers), axis=1))
        return (smooth + pen) / self.N

    def _prox_step(self, a, beta, centers, step):
        z = beta - step * (self.G[a] @ beta - self.h[a])
        dz = np.linalg.norm(centers - z, axis=1)
        c = int(np.argmin(dz))
        weight = self.lam * np.prod(np.delete(dz, c))
        if dz[c] <= step * weight:
            return centers[c].copy()
        return centers[c] + (1.0 - step * weight / dz[c]) * (z - centers[c])

    def update_arm(self, a, beta, centers, tol):
        best_val = self.arm_value(a, beta, centers)
        best = beta
        for c in range(len(centers)):
            val = self.smooth(a, centers[c])
            if val < best_val:
                best, best_val = centers[c].copy(), val
        step = 1.0 / self.L[a]
        for _ in range(ARM_PROX_STEPS):
            while True:
                cand = self._prox_step(a, best, centers, step)
                val = self.arm_value(a, cand, centers)
                if val <= best_val or step < 1e-12 / self.L[a]:
                    break
                step *= 0.5
            if val > best_val:
                break
            improvement = best_val - val
            best, best_val = cand, val
            if improvement <= tol:
                break
        return best

    def update_center(self, c, per_arm, centers, snapped):
        """Move center ``c`` together with the arms fused to it (majorize-minimize)."""
        members = np.flatnonzero(snapped == c)
        free = np.flatnonzero(snapped < 0)
        others = np.delete(centers, c, axis=0)
        if len(free):
            weights = self.lam * np.prod(
                np.linalg.norm(per_arm[free][:, None] - others[None], axis=2), axis=1)
            active = weights > 0
            free, weights = free[active], weights[active]
        else:
            weights = np.zeros(0)
        if len(members) == 0 and len(free) == 0:
            return centers[c]
        G = self.G[members].sum(axis=0) if len(members) else np.zeros((self.m, self.m))
        h = self.h[members].sum(axis=0) if len(members) else np.zeros(self.m)

        def value(nu):
            v = sum(self.smooth(a, nu) for a in members)
            return v + float(weights @ np.linalg.norm(per_arm[free] - nu, axis=1))

        nu = centers[c].copy()
        current = value(nu)
        for _ in range(CENTER_STEPS):
            if len(free):
                dist = np.maximum(np.linalg.norm(per_arm[free] - nu, axis=1), 1e-300)
                omega = weights / dist
                lhs = G + omega.sum() * np.eye(self.m)
                rhs = h + omega @ per_arm[free]
            else:
                lhs, rhs = G, h
            try:
                cand = np.linalg.solve(lhs, rhs)
            except np.linalg.LinAlgError:
                cand = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
            val = value(cand)
            if not val < current:
                break
            gain = current - val
            nu, current = cand, val
            if len(free) == 0 or gain <= 1e-15:
                break
        return nu


def _snapped(per_arm, centers):
    """Index of the center each arm coincides with exactly, else -1."""
    out = np.full(len(per_arm), -1)
    for a in range(len(per_arm)):
        for c in range(len(centers)):
            if np.array_equal(per_arm[a], centers[c]):
                out[a] = c
                break
    return out


def classifier_lasso_fit(X, r, C: int, lambda1: float, cfg: ClusteringConfig,
                         rng: np.random.Generator, subset=None) -> ClusteringResult:
    """Minimize the classifier-Lasso objective by block coordinate descent.

    Per-arm vectors start at per-arm ridge fits and centers at k-means on
    those fits. Each outer iteration runs proximal-gradient steps (with
    backtracking and snap-to-center candidates) on every arm, then moves each
    center jointly with the arms fused to it. Every block step is accepted
    only if it does not raise the objective.
    """
    X, r = _check_data(None, X, r)
    N, T0, m = X.shape
    if subset is None:
        subset = list(range(N))
    fit = _Fit(X, r, lambda1)
    per_arm = np.array([np.linalg.solve(fit.G[a] + RIDGE_INIT * np.eye(m), fit.h[a])
                        for a in range(N)])
    centers = kmeans(per_arm, C, rng, restarts=cfg.kmeans_restarts)

    history = [fit.objective(per_arm, centers)]
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        for a in range(N):
            per_arm[a] = fit.update_arm(a, per_arm[a], centers, cfg.tol * 1e-3)
        snapped = _snapped(per_arm, centers)
        for c in range(C):
            nu = fit.update_center(c, per_arm, centers, snapped)
            centers[c] = nu
            per_arm[snapped == c] = nu
        value = fit.objective(per_arm, centers)
        if not np.isfinite(value):
            raise NumericalError("classifier-Lasso objective became non-finite")
        history.append(value)
        if history[-2] - value < cfg.tol:
            break

    # final snap pass: arms within match_tol of a center become that center
    D = _distances(per_arm, centers)
    for a in range(N):
        hits = np.flatnonzero(D[a] <= cfg.match_tol)
        if hits.size:
            per_arm[a] = centers[hits[0]]
    labels = assign_clusters(per_arm, centers, cfg.match_tol)
    objective = classifier_lasso_objective(per_arm, centers, X, r, lambda1)
    return ClusteringResult(list(subset), per_arm, centers, labels, objective,
                            iterations, history, lambda1)


def match_labels(est_labels, true_labels, C: int) -> dict:
    """Map estimated ids to true ids (both 1-based) minimizing mismatches.

    Label 0 in ``est_labels`` is ignored. Exhaustive for ``C <= 8``,
    Hungarian assignment above that.
    """
    est = np.asarray(est_labels)
    true = np.asarray(true_labels)
    if est.shape != true.shape:
        raise ValidationError("label arrays must have the same length")
    conf = np.zeros((C, C), dtype=int)
    for e, t in zip(est, true):
        if e > 0:
            conf[e - 1, t - 1] += 1
    if C <= 8:
        best, best_perm = -1, None
        for perm in itertools.permutations(range(C)):
            agree = sum(conf[i, perm[i]] for i in range(C))
            if agree > best:
                best, best_perm = agree, perm
    else:
        from scipy.optimize import linear_sum_assignment

        rows, cols = linear_sum_assignment(-conf)
        best_perm = tuple(cols[np.argsort(rows)])
    return {i + 1: best_perm[i] + 1 for i in range(C)}


def clustering_error(est_labels, true_labels, C: int) -> np.ndarray:
    """Share of arms in each (matched) estimated cluster that belong elsewhere.

    Entry ``c - 1`` refers to true cluster ``c``; it is 0 when no arm was
    assigned there.
    """
    mapping = match_labels(est_labels, true_labels, C)
    est = np.asarray(est_labels)
    true = np.asarray(true_labels)
    eps = np.zeros(C)
    for e, t in mapping.items():
        assigned = est == e
        n = int(assigned.sum())
        if n:
            eps[t - 1] = np.sum(assigned & (true != t)) / n
    return eps


def center_errors(centers, true_params, mapping: dict) -> np.ndarray:
    """2-norm error of each estimated center against its matched true vector."""
    centers = np.asarray(centers)
    true_params = np.asarray(true_params)
    return np.array([np.linalg.norm(centers[e - 1] - true_params[t - 1])
                     for e, t in sorted(mapping.items())])
