"""The clusterLCBwK agent and its baselines."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import benchmark
from .cluster import (ClusteringConfig, ClusteringResult, classifier_lasso_fit,
                      clustering_error, sample_subset, subset_size)
from .env import NO_OP, BudgetLedger, Instance, draw_context, pull
from .estimate import ClusterEstimate, RadiusConfig, consumption_radius, reward_radius
from .exceptions import NumericalError, ValidationError
from .omd import omd_init, omd_step

BASELINES = ("cluster_lcbwk", "single_cluster_lcbwk", "random", "greedy_no_knapsack")


@dataclass
class RunConfig:
    T: int
    B: float
    baseline: str = "cluster_lcbwk"
    allow_noop_in_argmax: bool = False
    seed: int = 0
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    radius: RadiusConfig = field(default_factory=RadiusConfig)
    n_subset: Optional[int] = None  # overrides the N_S formula
    T0: Optional[int] = None  # defaults to N_S
    n_mc_opt: int = 500

    def __post_init__(self):
        if self.baseline not in BASELINES:
            raise ValidationError(f"baseline: unknown value {self.baseline!r}")
        if int(self.T) != self.T or self.T < 1:
            raise ValidationError("T must be a positive integer")
        if not self.B > 0:
            raise ValidationError("B must be positive")

    def resolve(self, instance: Instance):
        """``(N_S, T0)`` for this instance; enforces ``B > N_S T0`` and ``T > N_S T0``."""
        if self.n_subset is not None:
            n_subset = int(self.n_subset)
            if not 1 <= n_subset <= instance.K:
                raise ValidationError(f"n_subset must lie in [1, K={instance.K}]")
        else:
            n_subset = subset_size(instance.K, instance.p_min, instance.C, self.T,
                                   self.clustering.delta, self.clustering.c0)
        T0 = n_subset if self.T0 is None else int(self.T0)
        explore = n_subset * T0
        if not self.B > explore:
            raise ValidationError(
                f"budget must satisfy B > N_S T_0 (B={self.B}, N_S={n_subset}, T0={T0})")
        if not self.T > explore:
            raise ValidationError(
                f"horizon must satisfy T > N_S T_0 (T={self.T}, N_S={n_subset}, T0={T0})")
        return n_subset, T0


@dataclass
class PhaseOne:
    """Everything known after exploration and clustering."""

    subset: np.ndarray
    T0: int
    contexts: np.ndarray  # (N_S*T0) x N_S x m
    arm_X: np.ndarray  # N_S x T0 x m
    arm_r: np.ndarray  # N_S x T0
    arm_v: np.ndarray  # N_S x T0 x d
    clustering: Optional[ClusteringResult]
    labels: np.ndarray  # 1-based per sampled arm, 0 = unassigned
    estimates: list
    opt_hat: float
    Z: float
    eps_hat: float
    n_periods: int  # exploration periods actually played
    stopped: bool

    @property
    def n_subset(self) -> int:
        return len(self.subset)


@dataclass
class RunTrace:
    baseline: str
    T: int
    B: float
    n_subset: int
    T0: int
    arms: np.ndarray
    clusters: np.ndarray
    rewards: np.ndarray
    consumption: np.ndarray
    theta: np.ndarray
    scores: np.ndarray
    T_omega: int
    stopped: bool
    opt_total: float
    opt_hat: float
    Z: float
    eps_c: np.ndarray
    subset: np.ndarray
    labels: np.ndarray
    norm_sum_violations: int = 0

    @property
    def phase_boundary(self) -> int:
        return self.n_subset * self.T0

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    @property
    def regret(self) -> float:
        return benchmark.regret(self.opt_total, self.rewards)

    @property
    def cumulative_consumption(self) -> np.ndarray:
        return np.cumsum(self.consumption, axis=0)


def _streams(cfg: RunConfig, rng):
    base = rng if rng is not None else np.random.default_rng(cfg.seed)
    subset, context, noise, clustering, opt = base.spawn(5)
    return {"subset": subset, "context": context, "noise": noise,
            "clustering": clustering, "opt": opt}


class _Recorder:
    def __init__(self, T, d):
        self.arms = np.full(T, NO_OP, dtype=int)
        self.clusters = np.zeros(T, dtype=int)
        self.rewards = np.zeros(T)
        self.consumption = np.zeros((T, d))
        self.theta = np.zeros((T, d))
        self.scores = np.full(T, np.nan)
        self.n = 0

    def add(self, arm, cluster, outcome, theta=None, score=np.nan):
        i = self.n
        self.arms[i] = arm
        self.clusters[i] = cluster
        self.rewards[i] = outcome.reward
        self.consumption[i] = outcome.consumption
        if theta is not None:
            self.theta[i] = theta
        self.scores[i] = score
        self.n += 1


def explore_and_cluster(instance: Instance, cfg: RunConfig, streams, ledger: BudgetLedger,
                        recorder: _Recorder, single_cluster: bool = False) -> PhaseOne:
    """Sample the arm subset, play it round-robin and cluster it on rewards."""
    n_subset, T0 = cfg.resolve(instance)
    m, d = instance.m, instance.d
    if cfg.n_subset is not None:
        subset = np.sort(streams["subset"].choice(instance.K, n_subset, replace=False))
    else:
        subset = np.array(sample_subset(instance.K, instance.p_min, instance.C, cfg.T,
                                        cfg.clustering.delta, cfg.clustering.c0,
                                        streams["subset"]))
    n0 = n_subset * T0
    contexts = np.zeros((n0, n_subset, m))
    arm_X = np.zeros((n_subset, T0, m))
    arm_r = np.zeros((n_subset, T0))
    arm_v = np.zeros((n_subset, T0, d))
    t = 0
    stopped = False
    for rnd in range(T0):
        for i, a in enumerate(subset):
            X = draw_context(instance, streams["context"])
            outcome = pull(instance, int(a), X[a], streams["noise"])
            contexts[t] = X[subset]
            arm_X[i, rnd] = X[a]
            arm_r[i, rnd] = outcome.reward
            arm_v[i, rnd] = outcome.consumption
            recorder.add(int(a), 0, outcome)
            ledger.update(outcome.consumption)
            t += 1
            if ledger.stopped:
                stopped = True
                break
        if stopped:
            break

    radius = cfg.radius
    eps_hat = radius.resolve_eps(instance.p_min, n_subset)
    if stopped:
        return PhaseOne(subset, T0, contexts, arm_X, arm_r, arm_v, None,
                        np.zeros(n_subset, dtype=int), [], 0.0, 0.0, eps_hat, t, True)

    if single_cluster:
        clustering = None
        labels = np.ones(n_subset, dtype=int)
        n_clusters = 1
    else:
        lam = cfg.clustering.resolve_lambda1(T0)
        clustering = classifier_lasso_fit(arm_X, arm_r, instance.C, lam, cfg.clustering,
                                          streams["clustering"], subset=list(subset))
        labels = clustering.labels
        n_clusters = instance.C

    estimates = [ClusterEstimate(m, d, radius.lambda2) for _ in range(n_clusters)]
    # warm start, in play order
    for rnd in range(T0):
        for i in range(n_subset):
            if labels[i] > 0:
                estimates[labels[i] - 1].update(arm_X[i, rnd], arm_r[i, rnd], arm_v[i, rnd])

    opt_hat = benchmark.estimate_opt_hat(contexts, labels, estimates, instance.K, n_subset,
                                         T0, cfg.B, cfg.T)
    Z = benchmark.compute_Z(opt_hat, n_subset, instance.K, cfg.B - n0)
    return PhaseOne(subset, T0, contexts, arm_X, arm_r, arm_v, clustering, labels,
                    estimates, opt_hat, Z, eps_hat, t, False)


def score_arms(xs, lab, MU, WH, MINV, rad_r, rad_w, Z, theta):
    """Composite optimistic score ``x.mu~ - Z x.W~ theta`` for rows ``xs``.

    ``lab`` holds 0-based cluster indices into the stacked estimates.
    """
    norms = np.sqrt(np.maximum(np.einsum("nm,nmk,nk->n", xs, MINV[lab], xs), 0.0))
    opt_r = np.einsum("nm,nm->n", xs, MU[lab]) + rad_r[lab] * norms
    opt_v = np.einsum("nm,nmd->nd", xs, WH[lab]) - (rad_w[lab] * norms)[:, None]
    return opt_r - Z * (opt_v @ theta)


def choose_arm(estimates, labels, contexts, Z: float, theta, radii,
               allow_noop: bool = False) -> int:
    """Index (into ``labels``/``contexts`` rows) of the best-scoring labelled arm.

    ``radii`` is a list of ``(reward_radius, consumption_radius)`` per cluster.
    Ties go to the lowest index; returns ``NO_OP`` only when ``allow_noop``
    and every score is negative.
    """
    labels = np.asarray(labels)
    playable = np.flatnonzero(labels > 0)
    if playable.size == 0:
        raise ValidationError("no labelled arm to choose from")
    MU = np.stack([e.mu_hat for e in estimates])
    WH = np.stack([e.W_hat for e in estimates])
    MINV = np.stack([e.M_inv for e in estimates])
    rad = np.asarray(radii, float).reshape(-1, 2)
    xs = np.asarray(contexts, float)[playable]
    scores = score_arms(xs, labels[playable] - 1, MU, WH, MINV, rad[:, 0], rad[:, 1], Z,
                        np.asarray(theta, float))
    if not np.any(np.isfinite(scores)):
        raise NumericalError("all arm scores are non-finite")
    best = int(np.nanargmax(scores))
    if allow_noop and scores[best] < 0:
        return NO_OP
    return int(playable[best])


def run_cluster_lcbwk(instance: Instance, cfg: RunConfig, rng=None,
                      opt_total: Optional[float] = None) -> RunTrace:
    """Run one episode of ``cfg.baseline`` (clusterLCBwK by default).

    ``opt_total`` is the benchmark used for regret; when omitted it is
    estimated with ``cfg.n_mc_opt`` Monte Carlo contexts.
    """
    baseline = cfg.baseline
    streams = _streams(cfg, rng)
    T, B = cfg.T, cfg.B
    m, d, K = instance.m, instance.d, instance.K
    ledger = BudgetLedger(B, d=d)
    rec = _Recorder(T, d)

    phase = explore_and_cluster(instance, cfg, streams, ledger, rec,
                                single_cluster=(baseline == "single_cluster_lcbwk"))
    subset, labels = phase.subset, phase.labels
    n0 = phase.n_subset * phase.T0
    if opt_total is None:
        opt_total = benchmark.oracle_opt(instance, B, T, cfg.n_mc_opt, streams["opt"])

    Z = 0.0 if baseline == "greedy_no_knapsack" else phase.Z
    if not phase.stopped:
        _online_phase(instance, cfg, phase, streams, ledger, rec, Z, baseline)
    violations = sum(e.norm_violations for e in phase.estimates)

    if phase.clustering is not None:
        true = instance.memberships[subset] + 1
        eps_c = clustering_error(labels, true, instance.C)
    else:
        eps_c = np.full(instance.C, np.nan)

    n = rec.n
    return RunTrace(
        baseline=baseline, T=T, B=B, n_subset=phase.n_subset, T0=phase.T0,
        arms=rec.arms[:n].copy(), clusters=rec.clusters[:n].copy(),
        rewards=rec.rewards[:n].copy(), consumption=rec.consumption[:n].copy(),
        theta=rec.theta[:n].copy(), scores=rec.scores[:n].copy(),
        T_omega=n, stopped=ledger.stopped, opt_total=float(opt_total),
        opt_hat=phase.opt_hat, Z=Z, eps_c=eps_c, subset=subset, labels=labels,
        norm_sum_violations=violations,
    )


def _online_phase(instance, cfg, phase, streams, ledger, rec, Z, baseline) -> None:
    T, B = cfg.T, cfg.B
    m, d = instance.m, instance.d
    radius = cfg.radius
    subset, labels = phase.subset, phase.labels
    n0 = phase.n_subset * phase.T0
    playable = np.flatnonzero(labels > 0)
    if playable.size == 0:
        raise ValidationError("clustering left no labelled arm to play")
    play_arms = subset[playable]
    lab = labels[playable] - 1
    estimates = phase.estimates
    n_clusters = len(estimates)

    MU = np.stack([e.mu_hat for e in estimates])
    WH = np.stack([e.W_hat for e in estimates])
    MINV = np.stack([e.M_inv for e in estimates])
    rad_r = np.zeros(n_clusters)
    rad_w = np.zeros(n_clusters)

    def refresh_radii(c):
        t_c = estimates[c].t_c
        rad_r[c] = reward_radius(t_c, m, radius.zeta, phase.eps_hat, radius.R, radius.lambda2)
        rad_w[c] = consumption_radius(t_c, m, d, radius.zeta, phase.eps_hat, radius.R,
                                      radius.lambda2)

    for c in range(n_clusters):
        refresh_radii(c)

    T_prime = T - n0
    rate = min(1.0, (B - n0) / T_prime)
    omd = omd_init(d, T_prime)
    ctx_rng, noise_rng = streams["context"], streams["noise"]
    choice_rng = streams["clustering"]

    for _ in range(n0 + 1, T + 1):
        X = draw_context(instance, ctx_rng)
        theta = omd.theta
        if baseline == "random":
            arm = int(subset[choice_rng.integers(len(subset))])
            outcome = pull(instance, arm, X[arm], noise_rng)
            rec.add(arm, int(labels[subset == arm][0]), outcome, theta)
            ledger.update(outcome.consumption)
            if ledger.stopped:
                break
            omd = omd_step(omd, outcome.consumption - rate)
            continue
        else:
            scores = score_arms(X[play_arms], lab, MU, WH, MINV, rad_r, rad_w, Z, theta)
            if not np.any(np.isfinite(scores)):
                raise NumericalError("all arm scores are non-finite")
            i = int(np.nanargmax(scores))
            score = float(scores[i])
            if cfg.allow_noop_in_argmax and score < 0:
                i = NO_OP

        if i == NO_OP:
            outcome = pull(instance, NO_OP, None, noise_rng)
            rec.add(NO_OP, 0, outcome, theta, score)
            ledger.update(outcome.consumption)
        else:
            arm = int(play_arms[i])
            c = int(lab[i])
            x = X[arm]
            outcome = pull(instance, arm, x, noise_rng)
            rec.add(arm, c + 1, outcome, theta, score)
            ledger.update(outcome.consumption)
            if ledger.stopped:
                break
            est = estimates[c]
            est.update(x, outcome.reward, outcome.consumption)
            MU[c], WH[c], MINV[c] = est.mu_hat, est.W_hat, est.M_inv
            refresh_radii(c)
        if ledger.stopped:
            break
        omd = omd_step(omd, outcome.consumption - rate)


def run_baseline(kind: str, instance: Instance, cfg: RunConfig, rng=None,
                 opt_total: Optional[float] = None) -> RunTrace:
    from dataclasses import replace

    return run_cluster_lcbwk(instance, replace(cfg, baseline=kind), rng, opt_total)
