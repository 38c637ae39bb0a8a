"""Synthetic clustered environment: instances, contexts, pulls and the budget ledger."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .exceptions import ContractViolation, GenerationError, ValidationError

NO_OP = -1
MAX_GENERATION_ATTEMPTS = 1000
MAX_CONTEXT_REJECTIONS = 100

CONTEXT_KINDS = ("uniform01", "beta", "truncated_gaussian", "constant")


@dataclass(frozen=True)
class ContextDistribution:
    """Per-entry law of the arm contexts.

    ``params`` is ``(alpha, beta)`` for ``beta`` and ``(mean, std)`` for
    ``truncated_gaussian``, ``(value,)`` for ``constant`` (every entry equal
    to ``value``) and ignored for ``uniform01``.
    """

    kind: str = "uniform01"
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in CONTEXT_KINDS:
            raise ValidationError(f"context_distribution: unknown kind {self.kind!r}")
        if self.kind == "constant":
            if len(self.params) != 1 or not 0.0 <= self.params[0] <= 1.0:
                raise ValidationError("context_distribution: constant needs one value in [0, 1]")
        elif self.kind != "uniform01":
            if len(self.params) != 2:
                raise ValidationError(f"context_distribution: {self.kind} needs two parameters")
            if self.params[1] <= 0 or (self.kind == "beta" and self.params[0] <= 0):
                raise ValidationError("context_distribution: parameters must be positive")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @classmethod
    def parse(cls, spec) -> "ContextDistribution":
        """Accept ``"uniform01"``, ``"beta(2,5)"``, ``"truncated_gaussian(0.5,0.2)"`` or an instance."""
        if isinstance(spec, cls):
            return spec
        text = str(spec).replace(" ", "")
        if "(" not in text:
            return cls(text)
        kind, _, rest = text.partition("(")
        if not rest.endswith(")"):
            raise ValidationError(f"context_distribution: cannot parse {spec!r}")
        try:
            params = tuple(float(v) for v in rest[:-1].split(","))
        except ValueError as exc:
            raise ValidationError(f"context_distribution: cannot parse {spec!r}") from exc
        return cls(kind, params)

    def __str__(self):
        if self.kind == "uniform01":
            return self.kind
        if self.kind == "constant":
            return f"constant({self.params[0]:g})"
        return f"{self.kind}({self.params[0]:g},{self.params[1]:g})"


@dataclass(frozen=True)
class InstanceConfig:
    K: int
    C: int
    m: int
    d: int
    separation: float = 0.0
    noise_half_width: float = 0.5
    proportions: Union[str, Sequence[float]] = "balanced"
    context_distribution: Union[str, ContextDistribution] = "uniform01"
    seed: int = 0

    def __post_init__(self):
        for name in ("K", "C", "m", "d"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.C > self.K:
            raise ValidationError(f"C must not exceed K (C={self.C}, K={self.K})")
        if self.separation < 0:
            raise ValidationError("separation must be nonnegative")
        if not 0.0 <= self.noise_half_width <= 0.5:
            raise ValidationError("noise_half_width must lie in [0, 1/2]")
        object.__setattr__(
            self, "context_distribution", ContextDistribution.parse(self.context_distribution)
        )
        p = self.proportion_vector()
        if np.any(p <= 0):
            raise ValidationError("proportions must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError(f"proportions must sum to 1, got {p.sum()!r}")
        if self.K * p.min() < 1:
            raise ValidationError("K * min(proportions) must be at least 1")

    def proportion_vector(self) -> np.ndarray:
        if isinstance(self.proportions, str):
            if self.proportions != "balanced":
                raise ValidationError(f"proportions: unknown value {self.proportions!r}")
            return np.full(self.C, 1.0 / self.C)
        p = np.asarray(self.proportions, dtype=float)
        if p.shape != (self.C,):
            raise ValidationError(f"proportions must have length C={self.C}")
        return p


@dataclass(frozen=True, eq=False)
class Instance:
    """Ground truth: cluster parameters, arm memberships and proportions.

    ``memberships`` holds 0-based cluster ids; ``mu`` is C x m and ``W`` is
    C x m x d.
    """

    config: InstanceConfig
    memberships: np.ndarray
    mu: np.ndarray
    W: np.ndarray
    p: np.ndarray
    p_min: float

    @property
    def K(self):
        return self.config.K

    @property
    def C(self):
        return self.config.C

    @property
    def m(self):
        return self.config.m

    @property
    def d(self):
        return self.config.d

    def arm_mu(self, arm: int) -> np.ndarray:
        return self.mu[self.memberships[arm]]

    def arm_W(self, arm: int) -> np.ndarray:
        return self.W[self.memberships[arm]]

    def expected_rewards(self, X: np.ndarray) -> np.ndarray:
        """Mean reward of every arm for a K x m context matrix."""
        return np.einsum("km,km->k", self.mu[self.memberships], X)

    def expected_consumption(self, X: np.ndarray) -> np.ndarray:
        """Mean consumption of every arm, K x d."""
        return np.einsum("kmd,km->kd", self.W[self.memberships], X)


@dataclass(frozen=True)
class PullOutcome:
    reward: float
    consumption: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.reward <= 1.0:
            raise ContractViolation(f"reward {self.reward!r} outside [0, 1]")
        v = self.consumption
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ContractViolation("consumption outside [0, 1]")


@dataclass
class BudgetLedger:
    B: float
    cumulative: np.ndarray = None
    stopped: bool = False
    d: int = field(default=1, repr=False)

    def __post_init__(self):
        if not self.B > 0:
            raise ValidationError("budget B must be positive")
        if self.cumulative is None:
            self.cumulative = np.zeros(self.d)
        else:
            self.cumulative = np.asarray(self.cumulative, dtype=float).copy()
            self.d = self.cumulative.size
        self.stopped = bool(np.any(self.cumulative >= self.B))

    def update(self, v) -> "BudgetLedger":
        if self.stopped:
            raise ContractViolation("ledger already stopped; no further pulls are allowed")
        v = np.asarray(v, dtype=float)
        if np.any(v < 0):
            raise ContractViolation("consumption must be nonnegative")
        self.cumulative = self.cumulative + v
        self.stopped = bool(np.any(self.cumulative >= self.B))
        return self


def ledger_update(ledger: BudgetLedger, v) -> BudgetLedger:
    return ledger.update(v)


def _round_memberships(p: np.ndarray, K: int) -> np.ndarray:
    counts = np.rint(p * K).astype(int)
    # Remainder goes to (or comes from) clusters in size order, lower index first.
    while counts.sum() < K:
        counts[np.argmin(counts)] += 1
    while counts.sum() > K:
        counts[np.argmax(counts)] -= 1
    return counts


def _capped_rows(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    return u / np.maximum(1.0, u.sum(axis=-1, keepdims=True))


def generate_instance(cfg: InstanceConfig, rng: np.random.Generator | None = None) -> Instance:
    """Draw an instance whose cluster reward vectors are ``separation``-apart.

    Reward rows are drawn one at a time and redrawn while they sit closer
    than ``separation`` to an accepted row; the total number of draws is
    capped at ``MAX_GENERATION_ATTEMPTS``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    K, C, m, d = cfg.K, cfg.C, cfg.m, cfg.d

    counts = _round_memberships(cfg.proportion_vector(), K)
    memberships = rng.permutation(np.repeat(np.arange(C), counts))

    mu = np.empty((C, m))
    attempts = 0
    for c in range(C):
        while True:
            if attempts >= MAX_GENERATION_ATTEMPTS:
                raise GenerationError(
                    f"could not reach separation {cfg.separation} between {C} clusters "
                    f"in {MAX_GENERATION_ATTEMPTS} draws"
                )
            attempts += 1
            row = _capped_rows(rng, m)
            if c == 0 or np.min(np.linalg.norm(mu[:c] - row, axis=1)) >= cfg.separation:
                mu[c] = row
                break

    # columns of every W_c obey the 1-norm cap
    W = np.swapaxes(_capped_rows(rng, (C, d, m)), 1, 2).copy()

    p = counts / K
    return Instance(cfg, memberships, mu, W, p, float(p.min()))


def draw_context(instance: Instance, rng: np.random.Generator) -> np.ndarray:
    dist = instance.config.context_distribution
    shape = (instance.K, instance.m)
    if dist.kind == "uniform01":
        return rng.random(shape)
    if dist.kind == "constant":
        return np.full(shape, dist.params[0])
    if dist.kind == "beta":
        return rng.beta(dist.params[0], dist.params[1], size=shape)
    mean, std = dist.params
    X = rng.normal(mean, std, size=shape)
    for _ in range(MAX_CONTEXT_REJECTIONS):
        bad = (X < 0.0) | (X > 1.0)
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        X[bad] = rng.normal(mean, std, size=n_bad)
    return np.clip(X, 0.0, 1.0)


def _noisy(mean: np.ndarray, R: float, rng: np.random.Generator) -> np.ndarray:
    w = np.minimum(np.minimum(2.0 * R, mean), 1.0 - mean)
    w = np.maximum(w, 0.0)
    return np.clip(mean + rng.uniform(-w, w), 0.0, 1.0)


def pull(instance: Instance, arm: int, context_row, rng: np.random.Generator) -> PullOutcome:
    """Play ``arm`` at context ``context_row``; ``NO_OP`` yields zero everything."""
    if arm == NO_OP:
        return PullOutcome(0.0, np.zeros(instance.d))
    if not 0 <= arm < instance.K:
        raise ValidationError(f"arm id {arm} outside [0, {instance.K})")
    x = np.asarray(context_row, dtype=float)
    c = instance.memberships[arm]
    means = np.empty(instance.d + 1)
    means[0] = instance.mu[c] @ x
    means[1:] = instance.W[c].T @ x
    out = _noisy(means, instance.config.noise_half_width, rng)
    return PullOutcome(float(out[0]), out[1:])


def instance_from_parameters(cfg: InstanceConfig, mu, W,
                             rng: np.random.Generator | None = None) -> Instance:
    """Instance with fixed cluster parameters; only memberships are drawn."""
    mu = np.array(mu, dtype=float).reshape(cfg.C, cfg.m)
    W = np.array(W, dtype=float).reshape(cfg.C, cfg.m, cfg.d)
    if np.any(mu < 0) or np.any(mu.sum(axis=1) > 1 + 1e-12):
        raise ValidationError("mu rows must be nonnegative with 1-norm at most 1")
    if np.any(W < 0) or np.any(W.sum(axis=1) > 1 + 1e-12):
        raise ValidationError("W columns must be nonnegative with 1-norm at most 1")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    counts = _round_memberships(cfg.proportion_vector(), cfg.K)
    memberships = rng.permutation(np.repeat(np.arange(cfg.C), counts))
    p = counts / cfg.K
    return Instance(cfg, memberships, mu, W, p, float(p.min()))
