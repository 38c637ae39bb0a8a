"""Per-cluster ridge estimates, confidence radii and optimistic estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .exceptions import ValidationError

RESOLVE_EVERY = 256


@dataclass
class RadiusConfig:
    """Confidence-radius settings.

    ``eps_hat`` is a number, ``"rate"`` (``c2 / (p_min * N_S)``) or
    ``"zero"`` (plain linear-bandit radii).
    """

    zeta: float = 0.1
    eps_hat: Union[float, str] = "rate"
    c2: float = 1.0
    lambda2: float = 1.0
    R: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.zeta < 1.0:
            raise ValidationError(f"zeta must lie in (0, 1), got {self.zeta!r}")
        if isinstance(self.eps_hat, str):
            if self.eps_hat not in ("rate", "zero"):
                raise ValidationError(f"eps_hat: unknown mode {self.eps_hat!r}")
        elif self.eps_hat < 0:
            raise ValidationError("eps_hat must be nonnegative")
        if self.c2 <= 0:
            raise ValidationError("c2 must be positive")
        if self.lambda2 <= 0:
            raise ValidationError("lambda2 must be positive")
        if self.R < 0:
            raise ValidationError("R must be nonnegative")

    def resolve_eps(self, p_min: float, n_subset: int) -> float:
        if self.eps_hat == "rate":
            return self.c2 / (p_min * n_subset)
        if self.eps_hat == "zero":
            return 0.0
        return float(self.eps_hat)


class ClusterEstimate:
    """Ridge state ``M = lambda2 I + sum x x^T`` with an incrementally kept inverse.

    ``norm_sum`` accumulates ``||x_i||`` in the metric of the inverse Gram
    matrix held just before ``x_i`` arrived; ``norm_violations`` counts the
    updates (from the second on) at which it exceeded ``sum_of_norms_bound``.
    """

    def __init__(self, m: int, d: int, lambda2: float = 1.0):
        if lambda2 <= 0:
            raise ValidationError("lambda2 must be positive")
        self.m, self.d, self.lambda2 = m, d, lambda2
        self.M = lambda2 * np.eye(m)
        self.M_inv = np.eye(m) / lambda2
        self.b_r = np.zeros(m)
        self.B_v = np.zeros((m, d))
        self.mu_hat = np.zeros(m)
        self.W_hat = np.zeros((m, d))
        self.t_c = 0
        self.norm_sum = 0.0
        self.norm_violations = 0

    def update(self, x, r: float, v) -> "ClusterEstimate":
        x = np.asarray(x, dtype=float)
        self.M += np.outer(x, x)
        Mx = self.M_inv @ x
        q = float(x @ Mx)
        self.M_inv -= np.outer(Mx, Mx) / (1.0 + q)
        self.b_r += r * x
        self.B_v += np.outer(x, v)
        self.t_c += 1
        self.norm_sum += math.sqrt(max(q, 0.0))
        if self.t_c >= 2 and self.norm_sum > sum_of_norms_bound(self.t_c, self.m):
            self.norm_violations += 1
        if self.t_c % RESOLVE_EVERY == 0:
            self.M_inv = np.linalg.inv(self.M)
        self.mu_hat = self.M_inv @ self.b_r
        self.W_hat = self.M_inv @ self.B_v
        return self

    def inverse_norm(self, x) -> float:
        """``||x||`` in the ``M^{-1}`` metric."""
        x = np.asarray(x, dtype=float)
        return math.sqrt(max(float(x @ self.M_inv @ x), 0.0))

    def copy(self) -> "ClusterEstimate":
        other = ClusterEstimate.__new__(ClusterEstimate)
        other.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                               for k, v in self.__dict__.items()})
        return other

    def to_dict(self) -> dict:
        return {
            "m": self.m, "d": self.d, "lambda2": self.lambda2, "t_c": self.t_c,
            "M": self.M.tolist(), "mu_hat": self.mu_hat.tolist(), "W_hat": self.W_hat.tolist(),
        }


def estimate_init(m: int, d: int, lambda2: float = 1.0) -> ClusterEstimate:
    return ClusterEstimate(m, d, lambda2)


def estimate_update(state: ClusterEstimate, x, r: float, v) -> ClusterEstimate:
    return state.update(x, r, v)


def _radius(log_arg: float, m: int, t_c: int, eps_hat: float, R: float, lambda2: float) -> float:
    log_term = math.log(max(log_arg, math.e))
    return (2.0 * (R + 1.0) * math.sqrt(m * log_term)
            + eps_hat * m * math.sqrt(t_c)
            + math.sqrt(lambda2 * m))


def reward_radius(t_c: int, m: int, zeta: float, eps_hat: float = 0.0,
                  R: float = 0.5, lambda2: float = 1.0) -> float:
    """Radius of the reward ellipsoid after ``t_c`` observations.

    With the defaults ``R = 1/2`` and ``lambda2 = 1`` this is
    ``3 sqrt(m ln(t_c m / zeta)) + eps m sqrt(t_c) + sqrt(m)``.
    """
    log_arg = max(t_c, 1) * m / (lambda2 * zeta)
    return _radius(log_arg, m, t_c, eps_hat, R, lambda2)


def consumption_radius(t_c: int, m: int, d: int, zeta: float, eps_hat: float = 0.0,
                       R: float = 0.5, lambda2: float = 1.0) -> float:
    log_arg = d * max(t_c, 1) * m / (lambda2 * zeta)
    return _radius(log_arg, m, t_c, eps_hat, R, lambda2)


def optimistic_reward(state: ClusterEstimate, x, radius: float):
    """Maximize ``x . beta`` over the reward ellipsoid; returns ``(value, beta*)``."""
    x = np.asarray(x, dtype=float)
    Mx = state.M_inv @ x
    norm = math.sqrt(max(float(x @ Mx), 0.0))
    if norm == 0.0:
        return float(x @ state.mu_hat), state.mu_hat.copy()
    witness = state.mu_hat + radius * Mx / norm
    return float(x @ state.mu_hat) + radius * norm, witness


def optimistic_consumption(state: ClusterEstimate, x, radius: float) -> np.ndarray:
    """Per-resource lower confidence value ``x . w_j - radius ||x||_{M^-1}``.

    Minimizes ``x^T W theta`` over the product of column ellipsoids for every
    nonnegative ``theta`` at once.
    """
    x = np.asarray(x, dtype=float)
    return x @ state.W_hat - radius * state.inverse_norm(x)


def sum_of_norms_bound(t: int, m: int) -> float:
    """``sqrt(m t ln t)``, the elliptical-potential bound for ``lambda2 = 1``."""
    return math.sqrt(m * t * math.log(t))
