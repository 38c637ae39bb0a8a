"""Independent oracles and fixtures shared by the test suite and ``selftest``."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .estimate import ClusterEstimate


def vertex_enumeration(c, A, b, u, tol=1e-9):
    """Brute-force LP optimum over all basic solutions.

    Returns ``(value, x)``; ``value`` is ``None`` when no vertex is feasible.
    Only suitable for a handful of variables.
    """
    c = np.asarray(c, float)
    A = np.asarray(A, float).reshape(-1, c.size)
    b = np.asarray(b, float)
    u = np.asarray(u, float)
    n = c.size
    G = np.vstack([A, -np.eye(n), np.eye(n)])
    h = np.concatenate([b, np.zeros(n), u])
    best, best_x = None, None
    for rows in itertools.combinations(range(G.shape[0]), n):
        sub = G[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, h[list(rows)])
        if np.all(G @ x <= h + tol * (1 + np.abs(h))):
            val = float(c @ x)
            if best is None or val > best:
                best, best_x = val, x
    return best, best_x


@dataclass
class MeasurementErrorFixture:
    """Response ``y = mu.x + u + h`` with ``h = gamma.x`` w.p. ``epsilon``, else 0.

    ``u`` is uniform on ``[-w, w]`` with ``w = min(2R, mu.x, 1 - mu.x)``.
    """

    gamma: np.ndarray
    epsilon: float
    R: float = 0.5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, float)
        if np.max(np.abs(self.gamma)) > 1.0:
            raise ValueError("gamma must lie in [-1, 1]^m")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be a probability")

    def sample(self, mu, X, rng):
        mean = X @ mu
        w = np.maximum(np.minimum(np.minimum(2 * self.R, mean), 1 - mean), 0.0)
        u = rng.uniform(-w, w)
        h = np.where(rng.random(len(X)) < self.epsilon, X @ self.gamma, 0.0)
        return mean + u + h


def ellipsoid_covers(mu, X, y, radius_fn, lambda2=1.0):
    """Fit ridge on ``(X, y)`` and report whether ``mu`` lies inside the ellipsoid."""
    m = X.shape[1]
    est = ClusterEstimate(m, 1, lambda2)
    for x, r in zip(X, y):
        est.update(x, r, (0.0,))
    diff = mu - est.mu_hat
    return float(np.sqrt(diff @ est.M @ diff)) <= radius_fn(est.t_c)


def sample_ellipsoid_boundary(center, M, radius, n, rng):
    """``n`` points with ``||beta - center||_M = radius`` exactly."""
    L = np.linalg.cholesky(M)  # M = L L^T
    z = rng.normal(size=(n, center.size))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    # beta - center = radius * L^{-T} z
    return center + radius * np.linalg.solve(L.T, z.T).T
