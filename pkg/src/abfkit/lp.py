"""Dense two-phase simplex with Bland's rule.

Solves ``min c.x  s.t.  A x <= b,  lb <= x <= ub`` where bound entries may
be ``-inf``/``+inf``. Every variable is split into a nonnegative difference,
bounds become ordinary rows, and the whole tableau is kept dense: problems
here have a handful of variables and at most a few thousand rows, so
simplicity and the anti-cycling guarantee of Bland pivoting matter more
than sparse-revised machinery.
"""
from __future__ import annotations

import dataclasses

import numpy as np

__all__ = ["LpResult", "solve_lp"]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_PIVOT_TOL = 1e-9
_FEAS_TOL = 1e-8
_MAX_ITER = 100_000


@dataclasses.dataclass
class LpResult:
    status: str
    x: np.ndarray | None = None
    value: float | None = None


def _pivot_loop(T: np.ndarray, b: np.ndarray, basis: np.ndarray, cost: np.ndarray) -> str:
    """Run simplex pivots in place until optimal or unbounded."""
    m = T.shape[0]
    for _ in range(_MAX_ITER):
        reduced = cost - cost[basis] @ T
        negative = np.flatnonzero(reduced < -_PIVOT_TOL)
        if negative.size == 0:
            return OPTIMAL
        entering = int(negative[0])  # Bland: lowest eligible column index
        col = T[:, entering]
        eligible = np.flatnonzero(col > _PIVOT_TOL)
        if eligible.size == 0:
            return UNBOUNDED
        ratios = b[eligible] / col[eligible]
        best = float(np.min(ratios))
        ties = eligible[ratios <= best + 1e-12]
        leave = int(ties[np.argmin(basis[ties])])  # Bland: lowest basic index
        piv = T[leave, entering]
        T[leave] /= piv
        b[leave] /= piv
        factors = T[:, entering].copy()
        factors[leave] = 0.0
        T -= np.outer(factors, T[leave])
        b -= factors * b[leave]
        np.maximum(b, 0.0, out=b, where=b > -1e-9)
        basis[leave] = entering
    raise RuntimeError("simplex iteration limit exceeded")


def solve_lp(c, a_ub, b_ub, lower, upper) -> LpResult:
    """Minimize ``c.x`` subject to ``a_ub x <= b_ub`` and box bounds."""
    c = np.asarray(c, dtype=float)
    nv = c.shape[0]
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if a_ub is None or len(a_ub) == 0:
        a_ub = np.zeros((0, nv))
        b_ub = np.zeros(0)
    A = np.asarray(a_ub, dtype=float).reshape(-1, nv)
    b = np.asarray(b_ub, dtype=float).ravel()

    # Fold bounds in as rows, then split x = p - q with p, q >= 0.
    rows = [A]
    rhs = [b]
    for i in range(nv):
        if np.isfinite(upper[i]):
            row = np.zeros(nv)
            row[i] = 1.0
            rows.append(row[None, :])
            rhs.append(np.array([upper[i]]))
        if np.isfinite(lower[i]):
            row = np.zeros(nv)
            row[i] = -1.0
            rows.append(row[None, :])
            rhs.append(np.array([-lower[i]]))
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    m = A.shape[0]

    struct = np.hstack([A, -A])  # columns: p_0..p_{nv-1}, q_0..q_{nv-1}
    n_struct = 2 * nv

    # Normalize to b >= 0; negated rows get artificial variables.
    sign = np.where(b < 0.0, -1.0, 1.0)
    struct = struct * sign[:, None]
    b = b * sign
    slack = np.diag(sign)
    art_rows = np.flatnonzero(sign < 0.0)
    n_art = art_rows.size
    art = np.zeros((m, n_art))
    art[art_rows, np.arange(n_art)] = 1.0

    T = np.hstack([struct, slack, art])
    b = b.copy()
    basis = np.empty(m, dtype=int)
    basis[sign > 0.0] = n_struct + np.flatnonzero(sign > 0.0)
    basis[art_rows] = n_struct + m + np.arange(n_art)

    # Phase 1: drive artificials to zero.
    if n_art > 0:
        cost1 = np.zeros(T.shape[1])
        cost1[n_struct + m:] = 1.0
        status = _pivot_loop(T, b, basis, cost1)
        if status != OPTIMAL:
            return LpResult(status=INFEASIBLE)
        if float(cost1[basis] @ b) > _FEAS_TOL:
            return LpResult(status=INFEASIBLE)
        # Pivot any residual basic artificial out, or drop its (redundant) row.
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] >= n_struct + m:
                candidates = np.flatnonzero(np.abs(T[i, : n_struct + m]) > _PIVOT_TOL)
                if candidates.size == 0:
                    keep[i] = False
                    continue
                entering = int(candidates[0])
                piv = T[i, entering]
                T[i] /= piv
                b[i] /= piv
                factors = T[:, entering].copy()
                factors[i] = 0.0
                T -= np.outer(factors, T[i])
                b -= factors * b[i]
                basis[i] = entering
        T = T[keep][:, : n_struct + m]
        b = b[keep]
        basis = basis[keep]
    else:
        T = T[:, : n_struct + m]

    cost2 = np.zeros(T.shape[1])
    cost2[:nv] = c
    cost2[nv:n_struct] = -c
    status = _pivot_loop(T, b, basis, cost2)
    if status != OPTIMAL:
        return LpResult(status=status)

    values = np.zeros(T.shape[1])
    values[basis] = b
    x = values[:nv] - values[nv:n_struct]
    return LpResult(status=OPTIMAL, x=x, value=float(c @ x))
