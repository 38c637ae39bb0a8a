"""Dense linear programs: maximize c.x subject to A x <= b, 0 <= x <= u.

``lp_solve`` runs a two-phase revised simplex with Bland's rule. Large sparse
programs (the static-policy LPs built by :mod:`clusterlcbwk.benchmark`) can be
routed to HiGHS through ``method="highs"`` or ``method="auto"``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import NumericalError, ValidationError

# dense simplex when (rows incl. finite upper bounds) x columns stays below this
AUTO_DENSE_LIMIT = 5_000
# the exploration LPs have one simplex row per period; dual simplex crawls on them
IPM_MIN_VARIABLES = 20_000


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    PIVOT_LIMIT = "pivot_limit"


@dataclass
class LpProblem:
    c: np.ndarray
    A: object  # dense ndarray or scipy.sparse matrix, k x n
    b: np.ndarray
    u: np.ndarray = None  # None or +inf entries mean no upper bound

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if sp.issparse(self.A):
            self.A = sp.csr_matrix(self.A, dtype=float)
        else:
            A = np.asarray(self.A, dtype=float)
            if A.size % max(n, 1):
                raise ValidationError(f"A has {A.size} entries, not a multiple of n={n}")
            self.A = A.reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.A.shape != (self.b.size, n):
            raise ValidationError(
                f"A has shape {self.A.shape}, expected ({self.b.size}, {n})"
            )
        self.u = np.full(n, np.inf) if self.u is None else np.asarray(self.u, dtype=float).ravel()
        if self.u.shape != (n,):
            raise ValidationError("u must have one entry per variable")
        if not np.all(np.isfinite(self.b)):
            raise ValidationError("b must be finite")
        if np.any(self.u < 0):
            raise ValidationError("upper bounds must be nonnegative")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def k(self) -> int:
        return self.b.size


@dataclass
class LpResult:
    x: np.ndarray
    value: float
    status: LpStatus
    pivots: int = 0
    duals: np.ndarray = None  # multipliers of the A x <= b rows (HiGHS path only)


def lp_solve(problem: LpProblem, tol: float = 1e-9, max_pivots: int = 10**6,
             method: str = "simplex") -> LpResult:
    if method == "auto":
        rows = problem.k + int(np.isfinite(problem.u).sum())
        method = "simplex" if problem.n * max(rows, 1) <= AUTO_DENSE_LIMIT else "highs"
    if method == "highs":
        return _solve_highs(problem)
    if method != "simplex":
        raise ValidationError(f"unknown LP method {method!r}")
    A = problem.A.toarray() if sp.issparse(problem.A) else problem.A
    return _revised_simplex(problem.c, A, problem.b, problem.u, tol, max_pivots)


def _solve_highs(problem: LpProblem) -> LpResult:
    from scipy.optimize import linprog

    bounds = np.column_stack([np.zeros(problem.n), problem.u])
    res = linprog(-problem.c, A_ub=problem.A if problem.k else None,
                  b_ub=problem.b if problem.k else None, bounds=bounds,
                  method="highs-ipm" if problem.n >= IPM_MIN_VARIABLES else "highs")
    if res.status == 0:
        duals = -res.ineqlin.marginals if problem.k else np.zeros(0)
        return LpResult(res.x, float(problem.c @ res.x), LpStatus.OPTIMAL, res.nit, duals)
    status = {1: LpStatus.PIVOT_LIMIT, 2: LpStatus.INFEASIBLE, 3: LpStatus.UNBOUNDED}.get(res.status)
    if status is None:
        raise NumericalError(f"HiGHS failed: {res.message}")
    return LpResult(np.full(problem.n, np.nan), float("nan"), status, res.nit)


class _Simplex:
    """Revised simplex on ``min c.z  s.t.  A z = b, z >= 0`` with ``b >= 0``."""

    def __init__(self, A, b, basis, tol, max_pivots):
        self.A, self.b = A, b
        self.basis = list(basis)
        self.tol = tol
        self.max_pivots = max_pivots
        self.pivots = 0

    def basic_solution(self):
        B = self.A[:, self.basis]
        return np.linalg.solve(B, self.b)

    def run(self, c, allowed):
        """Iterate to optimality; returns ``"optimal"``, ``"unbounded"`` or ``"pivot_limit"``."""
        A, tol = self.A, self.tol
        while True:
            B = A[:, self.basis]
            xB = np.linalg.solve(B, self.b)
            y = np.linalg.solve(B.T, c[self.basis])
            reduced = c - A.T @ y
            reduced[self.basis] = 0.0
            candidates = np.flatnonzero((reduced < -tol) & allowed)
            if candidates.size == 0:
                return "optimal"
            if self.pivots >= self.max_pivots:
                return "pivot_limit"
            j = int(candidates[0])
            w = np.linalg.solve(B, A[:, j])
            rows = np.flatnonzero(w > tol)
            if rows.size == 0:
                return "unbounded"
            ratios = np.maximum(xB[rows], 0.0) / w[rows]
            best = ratios.min()
            ties = rows[ratios <= best + tol * max(1.0, abs(best))]
            leave = min(ties, key=lambda i: self.basis[i])
            self.basis[leave] = j
            self.pivots += 1


def _revised_simplex(c, A, b, u, tol, max_pivots) -> LpResult:
    n = c.size
    finite = np.flatnonzero(np.isfinite(u))
    rows = [A, np.eye(n)[finite]]
    A1 = np.vstack(rows) if A.size or finite.size else np.zeros((0, n))
    b1 = np.concatenate([b, u[finite]])
    k = b1.size
    if k == 0:
        # no rows at all: any positive objective coefficient is unbounded
        if np.any(c > tol):
            return LpResult(np.zeros(n), float("inf"), LpStatus.UNBOUNDED)
        return LpResult(np.zeros(n), 0.0, LpStatus.OPTIMAL)

    sign = np.where(b1 < 0, -1.0, 1.0)
    neg = np.flatnonzero(sign < 0)
    n_art = neg.size
    # columns: x (n) | slacks (k) | artificials (n_art)
    Aeq = np.zeros((k, n + k + n_art))
    Aeq[:, :n] = A1 * sign[:, None]
    Aeq[:, n:n + k] = np.diag(sign)
    Aeq[neg, n + k + np.arange(n_art)] = 1.0
    beq = b1 * sign

    basis = [n + i for i in range(k)]
    for a, i in enumerate(neg):
        basis[i] = n + k + a
    solver = _Simplex(Aeq, beq, basis, tol, max_pivots)
    total = n + k + n_art
    allowed = np.ones(total, dtype=bool)

    if n_art:
        c1 = np.zeros(total)
        c1[n + k:] = 1.0
        status = solver.run(c1, allowed)
        if status == "pivot_limit":
            return LpResult(np.full(n, np.nan), float("nan"), LpStatus.PIVOT_LIMIT, solver.pivots)
        z = solver.basic_solution()
        infeas = sum(z[i] for i, j in enumerate(solver.basis) if j >= n + k)
        if infeas > max(tol, 1e-9 * (1.0 + np.abs(beq).max())) * 10:
            return LpResult(np.full(n, np.nan), float("nan"), LpStatus.INFEASIBLE, solver.pivots)
        _drive_out_artificials(solver, n + k, tol)
        allowed[n + k:] = False

    c2 = np.zeros(total)
    c2[:n] = -c
    status = solver.run(c2, allowed)
    if status == "unbounded":
        return LpResult(np.full(n, np.nan), float("inf"), LpStatus.UNBOUNDED, solver.pivots)
    if status == "pivot_limit":
        return LpResult(np.full(n, np.nan), float("nan"), LpStatus.PIVOT_LIMIT, solver.pivots)
    zB = solver.basic_solution()
    z = np.zeros(solver.A.shape[1])
    z[solver.basis] = zB
    x = np.clip(z[:n], 0.0, None)
    x = np.minimum(x, u)
    return LpResult(x, float(c @ x), LpStatus.OPTIMAL, solver.pivots)


def _drive_out_artificials(solver: _Simplex, first_art: int, tol: float):
    """Pivot zero-level artificials out of the basis; drop rows that are redundant."""
    i = 0
    while i < len(solver.basis):
        if solver.basis[i] < first_art:
            i += 1
            continue
        B = solver.A[:, solver.basis]
        row = np.linalg.solve(B.T, np.eye(len(solver.basis))[i]) @ solver.A[:, :first_art]
        row[[j for j in solver.basis if j < first_art]] = 0.0
        cols = np.flatnonzero(np.abs(row) > tol)
        if cols.size:
            solver.basis[i] = int(cols[0])
            solver.pivots += 1
            i += 1
        else:
            keep = [r for r in range(len(solver.basis)) if r != i]
            solver.A = solver.A[keep]
            solver.b = solver.b[keep]
            del solver.basis[i]
