"""Vertex-represented polytopes: membership, Caratheodory weights, enclosing balls, Hausdorff distance.

Facets are never enumerated; everything goes through the LP in
:mod:`extremal_flow.lp` or a min-norm-point projection.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lp import InfeasibleError, LpProblem, solve_lp

MEMBER_TOL = 1e-9


class DimensionError(ValueError):
    pass


class NotAMemberError(ValueError):
    def __init__(self, point, distance):
        super().__init__(f"point {np.round(point, 12).tolist()} is not a member (L1 distance {distance:.3e})")
        self.point = point
        self.distance = distance


@dataclass(frozen=True, eq=False)
class Polytope:
    """Convex hull of finitely many points in R^n."""

    vertices: np.ndarray
    canonical: bool = field(default=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("a polytope needs at least one vertex with positive dimension")
        if not np.all(np.isfinite(v)):
            raise ValueError("polytope vertices must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def __len__(self):
        return self.vertices.shape[0]

    def to_json(self) -> list:
        return self.vertices.tolist()

    @classmethod
    def from_json(cls, data) -> "Polytope":
        return cls(np.asarray(data, dtype=float))


@dataclass(frozen=True)
class BarycentricDecomposition:
    indices: tuple[int, ...]
    weights: np.ndarray

    def recombine(self, P: Polytope) -> np.ndarray:
        return self.weights @ P.vertices[list(self.indices)]


def _point(P: Polytope, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != P.dim:
        raise DimensionError(f"point has dimension {y.size}, polytope has {P.dim}")
    return y


def _scaling(V: np.ndarray) -> tuple[np.ndarray, float]:
    lo, hi = V.min(axis=0), V.max(axis=0)
    center = 0.5 * (lo + hi)
    scale = float(np.max(hi - lo))
    return center, (scale if scale > 0 else 1.0)


def _l1_projection(V: np.ndarray, y: np.ndarray):
    """min ||V^T theta - y||_1 over the simplex, in coordinates scaled to the unit box."""
    center, scale = _scaling(V)
    Vs = (V - center) / scale
    ys = (y - center) / scale
    m, n = Vs.shape
    A = np.zeros((n + 1, m + 2 * n))
    A[:n, :m] = Vs.T
    A[:n, m:m + n] = np.eye(n)
    A[:n, m + n:] = -np.eye(n)
    A[n, :m] = 1.0
    b = np.append(ys, 1.0)
    c = np.concatenate([np.zeros(m), -np.ones(2 * n)])
    sol = solve_lp(LpProblem(c, A, b))
    return sol.x[:m], -sol.value * scale


def l1_distance(P: Polytope, y) -> float:
    y = _point(P, y)
    return _l1_projection(P.vertices, y)[1]


def contains(P: Polytope, y, tol: float = MEMBER_TOL) -> bool:
    """True iff the L1 distance from y to P is at most tol."""
    y = _point(P, y)
    if np.any(np.all(np.abs(P.vertices - y) <= tol, axis=1)):
        return True
    return l1_distance(P, y) <= tol


def caratheodory(P: Polytope, y, tol: float = MEMBER_TOL) -> BarycentricDecomposition:
    """Write y as a convex combination of at most dim+1 vertices of P.

    Exact vertex hits return that single vertex (lowest index on duplicates);
    otherwise the weights are a basic optimal solution of the L1 projection LP.
    """
    y = _point(P, y)
    V = P.vertices
    hits = np.flatnonzero(np.all(np.abs(V - y) <= 1e-12, axis=1))
    if hits.size:
        return BarycentricDecomposition((int(hits[0]),), np.ones(1))
    theta, dist = _l1_projection(V, y)
    if dist > tol:
        raise NotAMemberError(y, dist)
    theta = np.where(theta > 1e-14, theta, 0.0)
    idx = np.flatnonzero(theta)
    w = theta[idx] / theta[idx].sum()
    return BarycentricDecomposition(tuple(int(i) for i in idx), w)


def extreme_indices(V: np.ndarray, tol: float = 1e-10) -> list[int]:
    """Indices of the points of V that are not in the hull of the others.

    Duplicates keep their lowest index.
    """
    V = np.asarray(V, dtype=float)
    distinct = []
    for i, v in enumerate(V):
        if not any(np.all(np.abs(V[j] - v) <= 1e-12) for j in distinct):
            distinct.append(i)
    if len(distinct) <= 2:
        return distinct
    kept = []
    for i in distinct:
        others = [j for j in distinct if j != i]
        try:
            _, dist = _l1_projection(V[others], V[i])
        except InfeasibleError:
            dist = np.inf
        if dist > tol * max(1.0, float(np.abs(V).max())):
            kept.append(i)
    return kept


def canonicalize(P: Polytope) -> Polytope:
    if P.canonical:
        return P
    return Polytope(P.vertices[extreme_indices(P.vertices)], canonical=True)


def _circumball(R: np.ndarray):
    """Smallest ball with every row of R on its boundary (center in the affine hull of R)."""
    if len(R) == 0:
        return None, -1.0
    if len(R) == 1:
        return R[0].copy(), 0.0
    base = R[0]
    U = R[1:] - base
    G = U @ U.T
    rhs = 0.5 * np.sum(U * U, axis=1)
    coef = np.linalg.lstsq(G, rhs, rcond=None)[0]
    center = base + coef @ U
    return center, float(np.max(np.linalg.norm(R - center, axis=1)))


def _inside(ball, p) -> bool:
    c, r = ball
    if c is None:
        return False
    return np.linalg.norm(p - c) <= r * (1 + 1e-12) + 1e-12


def _welzl(points: np.ndarray, boundary: list, n: int):
    if len(points) == 0 or len(boundary) == n + 1:
        return _circumball(np.array(boundary).reshape(len(boundary), -1)) if boundary else (None, -1.0)
    p = points[-1]
    ball = _welzl(points[:-1], boundary, n)
    if _inside(ball, p):
        return ball
    return _welzl(points[:-1], boundary + [p], n)


def chebyshev(P: Polytope) -> tuple[np.ndarray, float]:
    """Center and radius of the smallest ball containing P (Welzl recursion on the vertex list)."""
    V = P.vertices
    center, radius = _welzl(V[::-1], [], P.dim)
    radius = float(np.max(np.linalg.norm(V - center, axis=1)))
    return center, radius


def _min_norm_point(X: np.ndarray, tol: float = 1e-13) -> np.ndarray:
    """Wolfe's algorithm: the point of conv(rows of X) closest to the origin."""
    scale = max(1.0, float(np.max(np.sum(X * X, axis=1))))
    S = [int(np.argmin(np.sum(X * X, axis=1)))]
    w = np.ones(1)
    for _ in range(100 * (len(X) + 5)):
        x = w @ X[S]
        i = int(np.argmin(X @ x))
        if x @ x - x @ X[i] <= tol * scale or i in S:
            return x
        S.append(i)
        w = np.append(w, 0.0)
        while True:
            Y = X[S]
            k = len(S)
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = Y @ Y.T
            K[:k, k] = 1.0
            K[k, :k] = 1.0
            v = np.linalg.lstsq(K, np.append(np.zeros(k), 1.0), rcond=None)[0][:k]
            if np.all(v > 1e-15):
                w = v
                break
            mask = v <= 1e-15
            denom = w[mask] - v[mask]
            ratios = np.where(denom > 0, w[mask] / np.where(denom > 0, denom, 1.0), np.inf)
            theta = min(1.0, float(ratios.min()))
            w = (1 - theta) * w + theta * v
            keep = w > 1e-15
            if not np.any(keep):
                keep[int(np.argmax(w))] = True
            S = [s for s, kf in zip(S, keep) if kf]
            w = w[keep] / w[keep].sum()
    return w @ X[S]


def distance(P: Polytope, y) -> float:
    """Euclidean distance from y to P."""
    y = _point(P, y)
    return float(np.linalg.norm(_min_norm_point(P.vertices - y)))


def hausdorff(P: Polytope, Q: Polytope) -> float:
    if P.dim != Q.dim:
        raise DimensionError(f"dimensions differ: {P.dim} vs {Q.dim}")
    d1 = max(distance(Q, v) for v in P.vertices)
    d2 = max(distance(P, w) for w in Q.vertices)
    return max(d1, d2)
