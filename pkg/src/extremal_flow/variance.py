"""The variance functional h(y, K) and affine majorants of it.

h(y, K)^2 is the largest variance of a K-valued random variable with mean y.
Because the objective is linear in the distribution, the supremum is attained
by distributions carried by the vertices, so it is the value of the LP

    max  sum_i theta_i |v_i|^2 - |y|^2
    s.t. sum_i theta_i v_i = y,  sum_i theta_i = 1,  theta >= 0.

Outside K there is no feasible distribution and h is -inf.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import MEMBER_TOL, NotAMemberError, Polytope, _point, _scaling, chebyshev, contains
from .lp import InfeasibleError, LpProblem, LpSolution, solve_lp

__all__ = ["OUTSIDE", "AffineMajorant", "h_value", "h_squared_dual", "affine_majorant",
           "variance_lp", "solve_lp", "LpProblem", "LpSolution"]

OUTSIDE = float("-inf")


@dataclass(frozen=True)
class AffineMajorant:
    a: np.ndarray
    b: float

    def __call__(self, z) -> np.ndarray | float:
        z = np.asarray(z, dtype=float)
        return z @ self.a + self.b

    @property
    def slope(self) -> float:
        return float(np.linalg.norm(self.a))

    def shifted(self, slack: float) -> "AffineMajorant":
        return AffineMajorant(self.a, self.b + slack)

    def to_json(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b}


def variance_lp(V: np.ndarray, y: np.ndarray) -> LpProblem:
    m, n = V.shape
    A = np.vstack([V.T, np.ones((1, m))])
    return LpProblem(np.sum(V * V, axis=1), A, np.append(y, 1.0))


def _scaled_solve(P: Polytope, y: np.ndarray):
    center, scale = _scaling(P.vertices)
    Vs = (P.vertices - center) / scale
    ys = (y - center) / scale
    sol = solve_lp(variance_lp(Vs, ys))
    return sol, center, scale, ys


def h_value(y, P: Polytope) -> float:
    """sqrt of the maximal variance of P-valued random variables with mean y; OUTSIDE if y is not in P."""
    y = _point(P, y)
    V = P.vertices
    if len(V) == 1:
        return 0.0 if np.all(np.abs(V[0] - y) <= MEMBER_TOL) else OUTSIDE
    if P.canonical and np.any(np.all(np.abs(V - y) <= 1e-12, axis=1)):
        return 0.0
    try:
        sol, _, scale, ys = _scaled_solve(P, y)
    except InfeasibleError:
        return OUTSIDE
    return scale * float(np.sqrt(max(sol.value - ys @ ys, 0.0)))


def h_squared_dual(y, P: Polytope):
    """Value of h^2 at y and dual prices (lam, mu), in original coordinates.

    For every z in P:  h(z)^2 <= lam.z + mu - |z|^2, with equality at y.
    """
    y = _point(P, y)
    sol, center, scale, ys = _scaled_solve(P, y)
    n = P.dim
    lam_s, mu_s = sol.duals[:n], sol.duals[n]
    # |z|^2-terms rescale as s^2 |z_s|^2 with z_s = (z - c)/s
    lam = scale * lam_s + 2 * center
    mu = scale ** 2 * mu_s - scale * lam_s @ center - center @ center
    value = scale ** 2 * max(sol.value - ys @ ys, 0.0)
    return value, lam, mu


def _tangent(yp: np.ndarray, P: Polytope):
    """Tangent plane at yp of sqrt(q) with q the dual quadratic bound; None if h(yp) = 0."""
    h2, lam, mu = h_squared_dual(yp, P)
    if h2 <= 1e-24:
        return None
    hp = np.sqrt(h2)
    grad = (lam - 2 * yp) / (2 * hp)
    return AffineMajorant(grad, float(hp - grad @ yp))


def affine_majorant(y, P: Polytope, eps: float, max_halvings: int = 60) -> AffineMajorant:
    """Affine phi with phi(y) <= h(y, P) + eps/2 and phi >= h(., P) on all of P.

    The tangent is taken at y' = y + lam (c - y), c the Chebyshev center, with
    lam = 1/2, 1/4, ... until the bound at y is met. Tangents of the concave
    majorant sqrt(lam.z + mu - |z|^2) dominate h everywhere on P, not only at
    the vertices.
    """
    y = _point(P, y)
    if not contains(P, y):
        raise NotAMemberError(y, float("nan"))
    if np.all(np.abs(P.vertices - P.vertices[0]) <= 1e-14):
        return AffineMajorant(np.zeros(P.dim), 0.0)
    hy = max(h_value(y, P), 0.0)
    center, radius = chebyshev(P)
    target = hy + eps / 2
    for k in range(1, max_halvings + 1):
        yp = y + 2.0 ** (-k) * (center - y)
        phi = _tangent(yp, P)
        if phi is None:
            continue
        if phi(y) <= target:
            return phi
    return AffineMajorant(np.zeros(P.dim), float(radius))
