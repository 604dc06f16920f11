"""Self-contained dense simplex solver for the bound linear programs.

The programs this package builds are tiny (tens of variables), so a
two-phase primal simplex on a dense numpy tableau is both sufficient and
dependency-free. Bland's smallest-index pivot rule is used throughout,
which rules out cycling at the cost of a few extra pivots; with problems
this small that trade is free.

``solve_standard`` handles the canonical form::

    min c @ x   s.t.   A @ x = b,  x >= 0

``solve`` adds per-variable upper bounds by introducing slack rows,
which is all the callers here need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TOL = 1e-9


class LpInfeasibleError(ValueError):
    """Phase 1 could not drive the artificial variables to zero."""


class LpUnboundedError(ValueError):
    """The objective is unbounded on the feasible region."""


@dataclass(frozen=True)
class SimplexResult:
    x: np.ndarray
    objective: float
    n_pivots: int


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    basis[row] = col


def _run_phase(tableau: np.ndarray, basis: np.ndarray, n_cols: int, max_pivots: int) -> int:
    """Pivot until the reduced costs in the last row are non-negative."""
    pivots = 0
    while True:
        reduced = tableau[-1, :n_cols]
        candidates = np.flatnonzero(reduced < -_TOL)
        if candidates.size == 0:
            return pivots
        col = int(candidates[0])  # Bland: smallest eligible index enters
        column = tableau[:-1, col]
        rows = np.flatnonzero(column > _TOL)
        if rows.size == 0:
            raise LpUnboundedError("improving direction never leaves the feasible region")
        ratios = tableau[rows, -1] / column[rows]
        best = ratios.min()
        tied = rows[ratios <= best + _TOL]
        row = int(tied[np.argmin(basis[tied])])  # Bland: smallest basis index leaves
        _pivot(tableau, basis, row, col)
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("simplex pivot limit exceeded; numerical trouble likely")


def solve_standard(c: np.ndarray, a: np.ndarray, b: np.ndarray, max_pivots: int = 10_000) -> SimplexResult:
    """Minimize ``c @ x`` subject to ``a @ x = b`` and ``x >= 0``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).copy()
    c = np.asarray(c, dtype=np.float64)
    n_rows, n_vars = a.shape
    if b.shape != (n_rows,) or c.shape != (n_vars,):
        raise ValueError("inconsistent LP dimensions")
    a = a.copy()
    negative = b < 0
    a[negative] *= -1.0
    b[negative] *= -1.0

    # phase 1: artificial basis, minimize total artificial mass
    n_total = n_vars + n_rows
    tableau = np.zeros((n_rows + 1, n_total + 1))
    tableau[:-1, :n_vars] = a
    tableau[:-1, n_vars:n_total] = np.eye(n_rows)
    tableau[:-1, -1] = b
    basis = np.arange(n_vars, n_total)
    tableau[-1, :n_vars] = -a.sum(axis=0)
    tableau[-1, -1] = -b.sum()
    pivots = _run_phase(tableau, basis, n_total, max_pivots)
    if tableau[-1, -1] < -1e-7:
        raise LpInfeasibleError(f"phase 1 residual {-tableau[-1, -1]:.3e}")

    # drive leftover artificials out of the basis or drop their rows
    keep_rows = []
    for row in range(n_rows):
        if basis[row] < n_vars:
            keep_rows.append(row)
            continue
        pivot_cols = np.flatnonzero(np.abs(tableau[row, :n_vars]) > _TOL)
        if pivot_cols.size:
            _pivot(tableau, basis, row, int(pivot_cols[0]))
            pivots += 1
            keep_rows.append(row)
        # else: redundant constraint, drop the row
    rows = np.array(keep_rows + [n_rows], dtype=np.int64)
    tableau = tableau[rows][:, list(range(n_vars)) + [n_total]]
    basis = basis[np.array(keep_rows, dtype=np.int64)] if keep_rows else basis[:0]

    # phase 2: real objective expressed over the current basis
    tableau[-1, :] = 0.0
    tableau[-1, :n_vars] = c
    for row, var in enumerate(basis):
        tableau[-1] -= c[var] * tableau[row]
    pivots += _run_phase(tableau, basis, n_vars, max_pivots)

    x = np.zeros(n_vars)
    x[basis] = tableau[:-1, -1]
    return SimplexResult(x=x, objective=float(c @ x), n_pivots=pivots)


def solve(
    c: np.ndarray,
    a_eq: np.ndarray,
    b_eq: np.ndarray,
    upper: np.ndarray | None = None,
    max_pivots: int = 10_000,
) -> SimplexResult:
    """Minimize ``c @ x`` s.t. ``a_eq @ x = b_eq`` and ``0 <= x (<= upper)``.

    ``upper`` may contain ``np.inf`` for unbounded entries; finite bounds
    become slack rows in the standard form. The returned ``x`` covers the
    original variables only.
    """
    c = np.asarray(c, dtype=np.float64)
    a_eq = np.asarray(a_eq, dtype=np.float64)
    b_eq = np.asarray(b_eq, dtype=np.float64)
    n_vars = c.shape[0]
    if upper is None:
        res = solve_standard(c, a_eq, b_eq, max_pivots)
        return SimplexResult(res.x[:n_vars], res.objective, res.n_pivots)
    upper = np.asarray(upper, dtype=np.float64)
    bounded = np.flatnonzero(np.isfinite(upper))
    n_slack = bounded.size
    a = np.zeros((a_eq.shape[0] + n_slack, n_vars + n_slack))
    a[: a_eq.shape[0], :n_vars] = a_eq
    b = np.concatenate([b_eq, upper[bounded]])
    for s, var in enumerate(bounded):
        a[a_eq.shape[0] + s, var] = 1.0
        a[a_eq.shape[0] + s, n_vars + s] = 1.0
    c_full = np.concatenate([c, np.zeros(n_slack)])
    res = solve_standard(c_full, a, b, max_pivots)
    return SimplexResult(res.x[:n_vars], float(c @ res.x[:n_vars]), res.n_pivots)
