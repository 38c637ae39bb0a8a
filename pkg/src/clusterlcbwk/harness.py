"""Experiment configuration, replication orchestration and CSV output.

Config files are TOML. Keys live in the tables ``[instance]``, ``[run]``,
``[clustering]``, ``[radius]`` and ``[experiment]``; a key that belongs to
exactly one table may also be written at top level, so a minimal file can be

    K = 40
    C = 2
    m = 3
    d = 2
    T = 2000
    B = 1200

``[run]`` accepts either ``B`` or ``budget_fraction`` (``B = fraction * T``,
which also scales the budget along ``T_grid``). ``[instance]`` may pin the
cluster parameters with ``mu`` (C x m) and ``W`` (C x m x d) arrays.

CSV outputs (header row, comma separated):

* ``summary.csv``: one row per replication, horizon and baseline with
  ``SUMMARY_COLUMNS``.
* ``trace_{r}.csv``: one row per period of replication ``r`` at the primary
  horizon: ``baseline, t, arm, cluster, reward, v_1..v_d, theta_1..theta_d,
  score`` (``arm = -1`` is the no-op, ``cluster = 0`` marks exploration).
* ``regret_curve.csv``: ``CURVE_COLUMNS`` for the primary baseline, one row
  per entry of ``T_grid``.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from types import SimpleNamespace
from typing import Optional

import numpy as np
import tomli

from . import benchmark
from .agent import BASELINES, RunConfig, RunTrace, run_cluster_lcbwk
from .cluster import ClusteringConfig
from .env import (InstanceConfig, _round_memberships, draw_context, generate_instance,
                  instance_from_parameters)
from .estimate import RadiusConfig
from .exceptions import ValidationError

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("replication", "baseline", "T", "B", "N_S", "T0", "T_omega",
                   "total_reward", "opt_total", "opt_hat", "Z", "regret", "eps_c_max",
                   "wall_ms")
CURVE_COLUMNS = ("T", "mean_regret", "stderr", "mean_regret_over_T")

SECTION_KEYS = {
    "instance": ("K", "C", "m", "d", "separation", "noise_half_width", "proportions",
                 "context_distribution", "mu", "W"),
    "run": ("T", "B", "budget_fraction", "baseline", "allow_noop_in_argmax", "n_subset", "T0"),
    "clustering": tuple(f.name for f in fields(ClusteringConfig)),
    "radius": tuple(f.name for f in fields(RadiusConfig)),
    "experiment": ("seed", "replications", "T_grid", "output_dir", "n_mc_opt", "baselines",
                   "timing"),
}
_OWNER = {key: sec for sec, keys in SECTION_KEYS.items() for key in keys}


class ConfigError(ValidationError):
    """Validation error tied to a key (and line, when known) of a config file."""

    def __init__(self, message, key=None, line=None):
        where = ""
        if key is not None:
            where = f"{key}"
            if line is not None:
                where += f" (line {line})"
            where += ": "
        super().__init__(where + message)
        self.key = key
        self.line = line


@dataclass
class ExperimentConfig:
    instance: InstanceConfig
    run: RunConfig
    replications: int = 1
    T_grid: Optional[tuple] = None
    output_dir: str = "results"
    n_mc_opt: int = 500
    seed: int = 0
    baselines: tuple = BASELINES
    budget_fraction: Optional[float] = None
    fixed_mu: Optional[list] = None
    fixed_W: Optional[list] = None
    # False writes wall_ms as 0 so summary.csv is byte-for-byte reproducible
    timing: bool = True

    def __post_init__(self):
        if not isinstance(self.timing, bool):
            raise ValidationError("timing must be true or false")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ValidationError("replications must be a positive integer")
        if self.n_mc_opt < 1:
            raise ValidationError("n_mc_opt must be at least 1")
        if self.T_grid is not None:
            grid = tuple(int(t) for t in self.T_grid)
            if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValidationError("T_grid must be a non-empty, strictly increasing list")
            self.T_grid = grid
        bad = [b for b in self.baselines if b not in BASELINES]
        if bad:
            raise ValidationError(f"baselines: unknown value(s) {bad}")
        if self.run.baseline not in self.baselines:
            self.baselines = (self.run.baseline,) + tuple(self.baselines)

    @property
    def clustering(self) -> ClusteringConfig:
        return self.run.clustering

    @property
    def radius(self) -> RadiusConfig:
        return self.run.radius

    @property
    def horizons(self) -> tuple:
        grid = self.T_grid or ()
        return tuple(sorted(set(grid) | {self.run.T}))

    def budget_for(self, T: int) -> float:
        if self.budget_fraction is not None:
            return self.budget_fraction * T
        return self.run.B

    def run_config(self, T: int, baseline: Optional[str] = None, seed: int = 0) -> RunConfig:
        return replace(self.run, T=T, B=self.budget_for(T), seed=seed,
                       baseline=baseline or self.run.baseline, n_mc_opt=self.n_mc_opt)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    def with_output(self, output_dir) -> "ExperimentConfig":
        return replace(self, output_dir=str(output_dir))


def _key_lines(text: str) -> dict:
    """``(section, key) -> line number`` for every ``key = ...`` line."""
    out = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[([A-Za-z_][\w-]*)\]", stripped)
        if header:
            section = header.group(1)
            out.setdefault((section, None), n)
            continue
        m = re.match(r"^([A-Za-z_][\w-]*)\s*=", stripped)
        if m:
            out.setdefault((section, m.group(1)), n)
    return out


def _collect(data: dict, lines: dict) -> dict:
    """Route top-level and tabled keys into per-section dicts."""
    sections = {sec: {} for sec in SECTION_KEYS}
    origin = {}
    for name, value in data.items():
        if isinstance(value, dict):
            if name not in SECTION_KEYS:
                raise ConfigError("unknown table", key=f"[{name}]",
                                  line=lines.get((name, None)))
            for key, v in value.items():
                line = lines.get((name, key))
                if key not in SECTION_KEYS[name]:
                    raise ConfigError("unknown key", key=f"{name}.{key}", line=line)
                sections[name][key] = v
                origin[(name, key)] = line
        else:
            line = lines.get((None, name))
            if name not in _OWNER:
                raise ConfigError("unknown key", key=name, line=line)
            sec = _OWNER[name]
            if name in sections[sec]:
                raise ConfigError("given twice", key=f"{sec}.{name}", line=line)
            sections[sec][name] = value
            origin[(sec, name)] = line
    return sections, origin


def _build(cls, section: str, values: dict, origin: dict, **extra):
    try:
        return cls(**values, **extra)
    except ValidationError as exc:
        key = _blame(str(exc), values)
        line = origin.get((section, key)) if key else None
        raise ConfigError(str(exc), key=f"{section}.{key}" if key else section,
                          line=line) from exc
    except TypeError as exc:
        raise ConfigError(str(exc), key=section) from exc


def _blame(message: str, values: dict):
    """Best guess at the key an error message refers to."""
    for key in sorted(values, key=len, reverse=True):
        if re.search(rf"(?<![\w.]){re.escape(key)}(?!\w)", message):
            return key
    return None


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    lines = _key_lines(text)
    sec, origin = _collect(data, lines)

    def where(section, key):
        return dict(key=f"{section}.{key}", line=origin.get((section, key)))

    inst = dict(sec["instance"])
    for req in ("K", "C", "m", "d"):
        if req not in inst:
            raise ConfigError("required key is missing", key=f"instance.{req}")
    fixed_mu = inst.pop("mu", None)
    fixed_W = inst.pop("W", None)
    if (fixed_mu is None) != (fixed_W is None):
        raise ConfigError("mu and W must be given together", key="instance.mu")
    instance = _build(InstanceConfig, "instance", inst, origin)

    clustering = _build(ClusteringConfig, "clustering", sec["clustering"], origin)
    radius = _build(RadiusConfig, "radius", sec["radius"], origin)

    run = dict(sec["run"])
    if "T" not in run:
        raise ConfigError("required key is missing", key="run.T")
    fraction = run.pop("budget_fraction", None)
    if fraction is not None:
        if "B" in run:
            raise ConfigError("give either B or budget_fraction, not both", **where("run", "B"))
        if not fraction > 0:
            raise ConfigError("must be positive", **where("run", "budget_fraction"))
        run["B"] = fraction * run["T"]
    elif "B" not in run:
        raise ConfigError("required key is missing (B or budget_fraction)", key="run.B")
    run_cfg = _build(RunConfig, "run", run, origin, clustering=clustering, radius=radius)

    exp = dict(sec["experiment"])
    if "baselines" in exp:
        exp["baselines"] = tuple(exp["baselines"])
    try:
        cfg = ExperimentConfig(instance=instance, run=run_cfg, budget_fraction=fraction,
                               fixed_mu=fixed_mu, fixed_W=fixed_W, **exp)
    except ValidationError as exc:
        key = _blame(str(exc), exp) or "experiment"
        raise ConfigError(str(exc), **where("experiment", key)) from exc

    if fixed_mu is not None:
        try:
            instance_from_parameters(instance, fixed_mu, fixed_W, np.random.default_rng(0))
        except (ValidationError, ValueError) as exc:
            raise ConfigError(str(exc), **where("instance", "mu")) from exc
    _check_resolution(cfg, origin)
    return cfg


def _check_resolution(cfg: ExperimentConfig, origin: dict):
    """Every horizon must leave budget and time after exploration, with T0 = N_S by default."""
    p = _round_memberships(cfg.instance.proportion_vector(), cfg.instance.K) / cfg.instance.K
    probe = SimpleNamespace(K=cfg.instance.K, C=cfg.instance.C, p_min=float(p.min()))
    for T in cfg.horizons:
        run = cfg.run_config(T)
        try:
            n_subset, T0 = run.resolve(probe)
        except ValidationError as exc:
            key = "B" if "B > N_S T_0" in str(exc) else "T"
            if key == "B" and cfg.budget_fraction is not None:
                key = "budget_fraction"
            raise ConfigError(f"{exc} at T={T}", key=f"run.{key}",
                              line=origin.get(("run", key))) from exc
        if cfg.run.T0 is None:
            assert T0 == n_subset, "default exploration length must equal N_S"


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", key=str(path)) from exc
    return parse_config(text)


def build_instance(cfg: ExperimentConfig, rng: np.random.Generator):
    if cfg.fixed_mu is not None:
        return instance_from_parameters(cfg.instance, cfg.fixed_mu, cfg.fixed_W, rng)
    return generate_instance(cfg.instance, rng)


def replication_seed(seed: int, r: int) -> int:
    return int(seed) ^ int(r)


def _seed_streams(seed_r: int):
    instance_ss, run_ss, opt_ss = np.random.SeedSequence(seed_r).spawn(3)
    return instance_ss, run_ss, opt_ss


def fresh_rng(ss: np.random.SeedSequence) -> np.random.Generator:
    """Generator on a copy of ``ss``, so spawning from it never advances ``ss`` itself."""
    return np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key))


def exact_support(instance):
    """Single-point support for a constant context law, else ``None``."""
    if instance.config.context_distribution.kind == "constant":
        return [(draw_context(instance, np.random.default_rng(0)), 1.0)]
    return None


def compute_opt(instance, B: float, T: int, n_mc: int, opt_ss) -> float:
    return benchmark.oracle_opt(instance, B, T, n_mc, fresh_rng(opt_ss),
                                support=exact_support(instance))


def _summary_row(r: int, trace: RunTrace, wall_ms: float) -> dict:
    eps = trace.eps_c
    eps_max = float(np.max(eps)) if eps.size and not np.all(np.isnan(eps)) else float("nan")
    return {
        "replication": r, "baseline": trace.baseline, "T": trace.T, "B": float(trace.B),
        "N_S": trace.n_subset, "T0": trace.T0, "T_omega": trace.T_omega,
        "total_reward": trace.total_reward, "opt_total": trace.opt_total,
        "opt_hat": float(trace.opt_hat), "Z": float(trace.Z), "regret": trace.regret,
        "eps_c_max": eps_max, "wall_ms": round(wall_ms, 3),
    }


def trace_header(d: int) -> list:
    return (["baseline", "t", "arm", "cluster", "reward"]
            + [f"v_{j}" for j in range(1, d + 1)]
            + [f"theta_{j}" for j in range(1, d + 1)] + ["score"])


def trace_rows(trace: RunTrace):
    for i in range(trace.T_omega):
        yield ([trace.baseline, i + 1, int(trace.arms[i]), int(trace.clusters[i]),
                float(trace.rewards[i])]
               + [float(v) for v in trace.consumption[i]]
               + [float(v) for v in trace.theta[i]] + [float(trace.scores[i])])


def run_replication(cfg: ExperimentConfig, r: int, T: int):
    """All baselines of replication ``r`` at horizon ``T`` on paired streams."""
    seed_r = replication_seed(cfg.seed, r)
    instance_ss, run_ss, opt_ss = _seed_streams(seed_r)
    instance = build_instance(cfg, fresh_rng(instance_ss))
    B = cfg.budget_for(T)
    opt_total = compute_opt(instance, B, T, cfg.n_mc_opt, opt_ss)
    rows, traces = [], []
    for baseline in cfg.baselines:
        run = cfg.run_config(T, baseline, seed_r)
        start = time.perf_counter()
        trace = run_cluster_lcbwk(instance, run, fresh_rng(run_ss), opt_total)
        wall_ms = 1e3 * (time.perf_counter() - start) if cfg.timing else 0.0
        rows.append(_summary_row(r, trace, wall_ms))
        traces.append(trace)
    return r, T, rows, traces


def _job(args):
    cfg, r, T, keep = args
    r, T, rows, traces = run_replication(cfg, r, T)
    return r, T, rows, traces if keep else []


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("BK_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError as exc:
            raise ValidationError(f"BK_THREADS must be an integer, got {cap!r}") from exc
    return max(1, min(limit, n_jobs))


def regret_curve(rows, baseline: str, grid) -> list:
    out = []
    for T in grid:
        regrets = np.array([row["regret"] for row in rows
                            if row["baseline"] == baseline and row["T"] == T])
        n = regrets.size
        mean = float(regrets.mean())
        stderr = float(regrets.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        out.append({"T": T, "mean_regret": mean, "stderr": stderr,
                    "mean_regret_over_T": mean / T})
    return out


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[k] for k in header] if isinstance(row, dict) else row)


def run_experiment(cfg: ExperimentConfig, output_dir=None, write_traces: bool = True,
                   quiet: bool = True) -> dict:
    """Run every replication and horizon, write the CSVs, return their paths and rows."""
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, r, T, write_traces and T == cfg.run.T)
            for r in range(cfg.replications) for T in cfg.horizons]
    n_workers = worker_count(len(jobs))
    results = {}
    if n_workers == 1:
        for job in jobs:
            r, T, rows, traces = _job(job)
            results[(r, T)] = (rows, traces)
            if not quiet:
                print(f"replication {r} T={T} done")
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for r, T, rows, traces in pool.map(_job, jobs):
                results[(r, T)] = (rows, traces)
                if not quiet:
                    print(f"replication {r} T={T} done")

    # single writer, deterministic order
    summary = [row for key in sorted(results) for row in results[key][0]]
    paths = {"summary": out / "summary.csv"}
    _write_csv(paths["summary"], SUMMARY_COLUMNS, summary)
    if write_traces:
        for r in range(cfg.replications):
            traces = results[(r, cfg.run.T)][1]
            path = out / f"trace_{r}.csv"
            rows = (row for tr in traces for row in trace_rows(tr))
            _write_csv(path, trace_header(cfg.instance.d), rows)
            paths[f"trace_{r}"] = path
    curve = None
    if cfg.T_grid:
        curve = regret_curve(summary, cfg.run.baseline, cfg.T_grid)
        paths["regret_curve"] = out / "regret_curve.csv"
        _write_csv(paths["regret_curve"], CURVE_COLUMNS, curve)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return {"paths": paths, "summary": summary, "curve": curve}
