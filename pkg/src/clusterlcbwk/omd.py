"""Exponentiated-gradient mirror descent over {theta in [0,1]^d : |theta|_1 <= 1}.

The domain is the (d+1)-simplex with coordinate 0 acting as slack, so the
entropic update keeps theta feasible without projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation, ValidationError


@dataclass
class OmdState:
    weights: np.ndarray
    eta: float
    horizon: int

    @property
    def d(self) -> int:
        return self.weights.size - 1

    @property
    def theta(self) -> np.ndarray:
        return self.weights[1:] / self.weights.sum()

    def copy(self) -> "OmdState":
        return OmdState(self.weights.copy(), self.eta, self.horizon)


def omd_init(d: int, horizon: int) -> OmdState:
    if d < 1 or horizon < 1:
        raise ValidationError("omd_init needs d >= 1 and horizon >= 1")
    eta = math.sqrt(math.log(d + 1) / horizon)
    return OmdState(np.full(d + 1, 1.0 / (d + 1)), eta, horizon)


def omd_step(state: OmdState, payoff) -> OmdState:
    """One multiplicative-weights step toward larger ``theta . payoff``."""
    g = np.asarray(payoff, dtype=float)
    if g.shape != (state.d,):
        raise ContractViolation(f"payoff must have length {state.d}")
    # method calls rather than np.any: this runs once per period
    if (np.abs(g) > 1.0 + 1e-12).any():
        raise ContractViolation("payoff entries must lie in [-1, 1]")
    w = state.weights.copy()
    w[1:] *= np.exp(state.eta * g)
    # renormalizing every step keeps the weights in floating-point range
    w /= w.sum()
    return OmdState(w, state.eta, state.horizon)


def hindsight_best(payoffs, d: int | None = None):
    """Best fixed theta for a sequence of linear payoffs: ``0`` or a unit vector."""
    payoffs = np.asarray(payoffs, dtype=float)
    if payoffs.size == 0:
        totals = np.zeros(d if d is not None else (payoffs.shape[-1] if payoffs.ndim == 2 else 0))
    else:
        totals = np.atleast_2d(payoffs).sum(axis=0)
    if totals.size == 0:
        return totals, 0.0
    theta = np.zeros(totals.size)
    j = int(np.argmax(totals))
    if totals[j] > 0:
        theta[j] = 1.0
        return theta, float(totals[j])
    return theta, 0.0
