"""Bang-bang feedback from chattering feedback, through the extremal iteration.

The control set U is finite, so F(t, x) = co{g(t, x, u) : u in U} is a vertex
multimap and an extremal selection f takes values g(t, x, u) for some u. The
feedback inverts f by enumerating U: among the controls whose image is
closest to f(t, x), the lexicographically smallest one is used.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expressions import Expression, ExpressionVector
from .flow import IterationState, Trajectory, build_extremal, integrate
from .multimap import (ActivePiece, Box, FunctionMap, HypothesisError, LipschitzMap, SeedSet, VertexCombination,
                       VertexMultiMap, estimate_lipschitz)

TIE_TOL = 1e-12
MATCH_TOL = 1e-9
REPORT_TOL = 1e-6


class ControlSystem:
    """x' = g(t, x, u), u in a finite set U (rows of `controls`)."""

    def __init__(self, dynamics, dim: int, controls, horizon: float, domain: Box, seed_set: SeedSet,
                 bound: float, lipschitz=None, names=None):
        U = np.atleast_2d(np.asarray(controls, dtype=float))
        if U.shape[0] < 1:
            raise ValueError("the control set needs at least one point")
        self.controls = U
        self.control_dim = U.shape[1]
        self.dim = dim
        if isinstance(dynamics, ExpressionVector):
            self.dynamics = dynamics
        else:
            self.dynamics = ExpressionVector(dynamics, dim, control_dim=self.control_dim)
        self.horizon = float(horizon)
        self.domain = domain
        self.seed_set = seed_set
        self.bound = float(bound)
        self.lipschitz = lipschitz
        self.names = names
        # lexicographic rank of each control point
        order = np.lexsort(U.T[::-1])
        self.lex_rank = np.empty(len(U), dtype=int)
        self.lex_rank[order] = np.arange(len(U))

    def image(self, t, x, u) -> np.ndarray:
        return self.dynamics.with_control(u)(t, x)

    def images(self, t, x) -> np.ndarray:
        """g(t, x, u_i) for every control point, shape (P, |U|, n)."""
        return np.stack([self.image(t, x, u) for u in self.controls], axis=1)


def to_multimap(sys: ControlSystem, lipschitz_seed: int = 0) -> VertexMultiMap:
    """F(t, x) = co{g(t, x, u_i)}: one vertex map per control point."""
    maps = [sys.dynamics.with_control(u) for u in sys.controls]
    names = sys.names or [f"g(., ., u{i})" for i in range(len(maps))]
    return VertexMultiMap(maps, sys.dim, sys.horizon, sys.domain, sys.seed_set, sys.bound,
                          lipschitz=sys.lipschitz, names=names, lipschitz_seed=lipschitz_seed)


class ChatteringFeedback:
    """Component controls u_0..u_k (indices into U) with weights theta on the simplex.

    Each control index and weight is a constant or an expression in t, x.
    At most n+1 components are allowed.
    """

    def __init__(self, controls, weights, dim: int):
        if len(controls) != len(weights) or not controls:
            raise ValueError("need matching, non-empty control and weight lists")
        if len(controls) > dim + 1:
            raise ValueError(f"at most {dim + 1} chattering components in dimension {dim}")
        self.dim = dim
        self.controls = [c if isinstance(c, (int, np.integer)) else Expression(c, dim) for c in controls]
        self.weights = [Expression(w, dim) for w in weights]

    @property
    def constant(self) -> bool:
        return all(isinstance(c, (int, np.integer)) for c in self.controls) and not any(
            w.depends_on_t or w.depends_on_x for w in self.weights)

    def indices(self, t, x) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        cols = []
        for c in self.controls:
            if isinstance(c, (int, np.integer)):
                cols.append(np.full(t.size, int(c)))
            else:
                v = c(t, x)
                r = np.rint(v)
                if np.any(np.abs(v - r) > 1e-9):
                    raise ValueError(f"control index expression {c.source!r} is not integer valued")
                cols.append(r.astype(int))
        return np.stack(cols, axis=1)

    def theta(self, t, x) -> np.ndarray:
        return np.stack([w(t, x) for w in self.weights], axis=1)


def _check_simplex(theta: np.ndarray, tol: float = 1e-9):
    if np.any(theta < -tol) or np.any(np.abs(theta.sum(axis=1) - 1.0) > tol):
        raise ValueError("chattering weights leave the simplex")


def relax(feedback: ChatteringFeedback, sys: ControlSystem, F: VertexMultiMap | None = None,
          samples: int = 2000, seed: int = 0) -> LipschitzMap:
    """f0(t, x) = sum_i theta_i(t, x) g(t, x, u_i(t, x)), a Lipschitz selection of co F."""
    F = F or to_multimap(sys)
    rng = np.random.default_rng(seed)
    box = F.tube_box()
    t = rng.random(samples) * sys.horizon
    x = box.lo + rng.random((samples, sys.dim)) * (box.hi - box.lo)
    _check_simplex(feedback.theta(t, x))
    idx = feedback.indices(t, x)
    if np.any(idx < 0) or np.any(idx >= len(sys.controls)):
        raise ValueError("control index outside U")
    if feedback.constant:
        th = feedback.theta(np.zeros(1), np.zeros((1, sys.dim)))[0]
        ids = feedback.indices(np.zeros(1), np.zeros((1, sys.dim)))[0]
        # merge repeated controls so the weights stay a convex combination of distinct maps
        merged: dict[int, float] = {}
        for i, w in zip(ids, th):
            merged[int(i)] = merged.get(int(i), 0.0) + float(w)
        keys = sorted(merged)
        return VertexCombination(F, keys, [merged[k] for k in keys])

    def f0(t, x):
        th = feedback.theta(t, x)
        ids = feedback.indices(t, x)
        V = F.vertex_values(t, x)
        rows = np.arange(th.shape[0])
        return sum(th[:, j:j + 1] * V[rows, ids[:, j]] for j in range(th.shape[1]))

    lt, lx = estimate_lipschitz(f0, sys.dim, sys.horizon, F.domain, seed=seed)
    return FunctionMap(f0, sys.dim, lt, lx, label="relaxed feedback")


@dataclass
class BangBangFeedback:
    sys: ControlSystem
    F: VertexMultiMap
    f0: LipschitzMap
    state: IterationState

    @property
    def f(self):
        return self.state.final

    def control_index(self, t, x, values=None) -> tuple[np.ndarray, np.ndarray]:
        """Index into U chosen at each point and the residual |g(t, x, u) - f(t, x)|."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.asarray(x, dtype=float).reshape(t.size, self.sys.dim)
        fv = self.f.evaluate_many(t, x) if values is None else np.asarray(values).reshape(t.size, -1)
        G = self.sys.images(t, x)
        d = np.linalg.norm(G - fv[:, None, :], axis=2)
        dmin = d.min(axis=1)
        if np.any(dmin > REPORT_TOL):
            k = int(np.argmax(dmin))
            raise HypothesisError(f"no control reproduces f at ({t[k]}, {x[k].tolist()}): residual {dmin[k]:.3e}")
        ties = d <= dmin[:, None] + TIE_TOL
        rank = np.where(ties, self.sys.lex_rank[None, :], len(self.sys.controls))
        return np.argmin(rank, axis=1), dmin

    def __call__(self, t, x) -> np.ndarray:
        return self.sys.controls[self.control_index(t, x)[0]]

    def evaluate(self, t: float, x) -> np.ndarray:
        return self(np.array([float(t)]), np.asarray(x, dtype=float).reshape(1, -1))[0]


def synthesize(sys: ControlSystem, feedback: ChatteringFeedback, eps0: float, K: int, **kw) -> BangBangFeedback:
    F = to_multimap(sys)
    f0 = relax(feedback, sys, F)
    state = build_extremal(F, f0, eps0, K, **kw)
    return BangBangFeedback(sys, F, f0, state)


class _ClosedLoop:
    """The selection t, x -> g(t, x, u_bar(t, x)) with the switching structure of f."""

    def __init__(self, fb: BangBangFeedback):
        self.fb = fb
        self.f = fb.f
        self.dim = fb.sys.dim
        self._last = None

    def evaluate_many(self, t, x):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.asarray(x, dtype=float).reshape(t.size, self.dim)
        idx, _ = self.fb.control_index(t, x)
        G = self.fb.sys.images(t, x)
        return G[np.arange(t.size), idx]

    def piece_keys(self, t, x):
        return self.f.piece_keys(t, x)

    def time_breaks(self, t0, t1):
        return self.f.time_breaks(t0, t1)

    def path_lipschitz(self, speed):
        return self.f.path_lipschitz(speed)

    def control(self, t, x) -> np.ndarray:
        """u_bar(t, x), reusing the value chosen by the last call to active."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if self._last is not None and self._last[0] == t and np.array_equal(self._last[1], x):
            return self._last[2]
        return self.fb.evaluate(t, x)

    def active(self, t, x):
        ap = self.f.active(t, x)
        t1, x1 = np.array([float(t)]), np.asarray(x, dtype=float).reshape(1, -1)
        # the active piece of f gives f(t, x) without another walk of the selection
        idx, _ = self.fb.control_index(t1, x1, values=ap.fn(t1, x1))
        u = self.fb.sys.controls[idx[0]]
        self._last = (t, x1[0].copy(), u)
        fn = self.fb.sys.dynamics.with_control(u)
        piece = FunctionMap(fn, self.dim, ap.fn.lipschitz_t, ap.fn.lipschitz_x, label=f"u = {u.tolist()}")
        return ActivePiece(ap.key, piece, ap.t_next, ap.margin)


def closed_loop(sys: ControlSystem, fb: BangBangFeedback, t0: float, x0, step: float | None = None) -> Trajectory:
    """Integrate x' = g(t, x, u_bar(t, x)); the control record holds u_bar at every node."""
    loop = _ClosedLoop(fb)
    return integrate(loop, t0, x0, fb.F, step=step, control=loop.control)
