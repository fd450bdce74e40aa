"""Dense two-phase simplex for small equality-form linear programs.

Solves ``max c.x  s.t.  A x = b, x >= 0`` with Bland's rule, which rules out
cycling on the degenerate problems that show up constantly here (vertex
measures with several equal objective coefficients).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-9


class LpError(Exception):
    pass


class InfeasibleError(LpError):
    def __init__(self, infeasibility: float):
        super().__init__(f"linear program is infeasible (residual {infeasibility:.3e})")
        self.infeasibility = infeasibility


class UnboundedError(LpError):
    pass


@dataclass(frozen=True)
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("objective must be a non-empty vector")
        if A.shape != (b.size, c.size):
            raise ValueError(f"constraint matrix has shape {A.shape}, expected {(b.size, c.size)}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("LP data must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class LpSolution:
    x: np.ndarray
    value: float
    duals: np.ndarray
    basis: tuple[int, ...]

    def primal_residual(self, p: LpProblem) -> float:
        return float(np.max(np.abs(p.A @ self.x - p.b), initial=0.0))

    def slackness_residual(self, p: LpProblem) -> float:
        reduced = p.c - p.A.T @ self.duals
        return float(np.max(np.abs(reduced * self.x), initial=0.0))


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])


def _run(T: np.ndarray, basis: list[int], ncols: int, tol: float, max_iter: int) -> None:
    """Bland iterations on tableau T whose last row holds reduced costs (max form).

    Only the first `ncols` columns may enter.
    """
    m = T.shape[0] - 1
    for _ in range(max_iter):
        cost = T[-1, :ncols]
        entering = np.flatnonzero(cost > tol)
        if entering.size == 0:
            return
        col = int(entering[0])
        column = T[:m, col]
        positive = np.flatnonzero(column > tol)
        if positive.size == 0:
            raise UnboundedError("objective is unbounded")
        ratios = T[positive, -1] / column[positive]
        best = ratios.min()
        ties = positive[ratios <= best + tol * max(1.0, abs(best))]
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, row, col)
        basis[row] = col
    raise LpError("simplex iteration limit reached")


def solve_lp(p: LpProblem, tol: float = PIVOT_TOL, feas_tol: float = FEAS_TOL) -> LpSolution:
    """Maximize ``p.c @ x`` over ``p.A @ x == p.b, x >= 0``.

    Raises InfeasibleError or UnboundedError. The returned duals satisfy
    ``c - A.T @ duals <= tol`` componentwise at optimality.
    """
    A = p.A.copy()
    b = p.b.copy()
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b *= sign
    max_iter = 50 * (m + n) + 100

    # phase 1: artificials n..n+m-1
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = A.sum(axis=0)
    T[-1, -1] = b.sum()
    basis = list(range(n, n + m))
    _run(T, basis, n, tol, max_iter)
    infeasibility = float(T[-1, -1])
    if infeasibility > feas_tol * max(1.0, float(np.abs(b).max(initial=0.0))):
        raise InfeasibleError(infeasibility)

    # drive artificials out; rows that cannot be pivoted are redundant
    keep = []
    for r in range(m):
        if basis[r] >= n:
            cols = np.flatnonzero(np.abs(T[r, :n]) > tol)
            if cols.size:
                _pivot(T, r, int(cols[0]))
                basis[r] = int(cols[0])
            else:
                continue
        keep.append(r)
    rows = keep + [m]
    T = T[rows][:, list(range(n)) + [n + m]]
    basis = [basis[r] for r in keep]

    # phase 2
    c = p.c
    T[-1, :] = 0.0
    T[-1, :n] = c
    for r, j in enumerate(basis):
        T[-1] -= c[j] * T[r]
    _run(T, basis, n, tol, max_iter)

    x = np.zeros(n)
    for r, j in enumerate(basis):
        x[j] = max(T[r, -1], 0.0)
    duals = np.zeros(m)
    if keep:
        B = A[keep][:, basis]
        y = np.linalg.lstsq(B.T, c[basis], rcond=None)[0]
        duals[keep] = y
    duals *= sign
    return LpSolution(x=x, value=float(c @ x), duals=duals, basis=tuple(basis))
