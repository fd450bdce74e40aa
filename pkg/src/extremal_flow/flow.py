"""Switching-aware integration, Picard distances and the level-by-level extremal iteration.

Selections handled here share a small protocol: vectorized evaluation
(`evaluate_many`), integer piece keys, the time breaks at which pieces switch
by time alone, and `active(t, x)`, the smooth piece in force from (t, x)
forward together with the events that end it.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Polytope, contains, extreme_indices
from .multimap import (ActivePiece, FunctionMap, HypothesisError, LipschitzMap, LipschitzPath,
                       VertexMultiMap, random_path)
from .selection import CoverError, NotCoveredError, PiecewiseSelection, SpaceTimeBox, refine, segment_path
from .variance import h_value

EPS_FLOOR = 1e-12
STRIP_CEIL = 1e12
BISECT_TOL = 1e-12


class ScheduleError(RuntimeError):
    pass


# trajectories and integration

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray
    t0: float
    x0: np.ndarray
    controls: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.interp(t, self.times, self.states[:, i]) for i in range(self.dim)], axis=1)

    def as_path(self, lipschitz: float) -> LipschitzPath:
        return LipschitzPath(self.times, self.states, lipschitz)

    def sup_distance(self, other: "Trajectory") -> float:
        """sup_t |x(t) - y(t)| over the common time range, on the union of both grids."""
        lo = max(self.times[0], other.times[0])
        hi = min(self.times[-1], other.times[-1])
        grid = np.union1d(self.times, other.times)
        grid = grid[(grid >= lo) & (grid <= hi)]
        return float(np.max(np.linalg.norm(self(grid) - other(grid), axis=1), initial=0.0))

    def check(self, F: VertexMultiMap, tol: float = 1e-9) -> dict:
        dt = np.diff(self.times)
        steps = np.linalg.norm(np.diff(self.states, axis=0), axis=1)
        return {
            "increasing": bool(np.all(dt > 0)),
            "speed_ok": bool(np.all(steps <= F.bound * dt + tol)),
            "in_tube": bool(np.all(F.in_tube(self.states, tol))),
        }

    def to_csv(self, path) -> None:
        n = self.dim
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"dx{i + 1}" for i in range(n)]
        rows = np.column_stack([self.times, self.states, self.derivatives])
        _write_csv(path, header, rows)

    def controls_to_csv(self, path) -> None:
        if self.controls is None:
            raise ValueError("trajectory carries no control record")
        header = ["t"] + [f"u{i + 1}" for i in range(self.controls.shape[1])]
        _write_csv(path, header, np.column_stack([self.times, self.controls]))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["%.17g" % v for v in row])


def _call(fn, t: float, x: np.ndarray) -> np.ndarray:
    return fn(np.array([t]), x.reshape(1, -1))[0]


def _rk4(fn, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = _call(fn, t, x)
    k2 = _call(fn, t + 0.5 * h, x + 0.5 * h * k1)
    k3 = _call(fn, t + 0.5 * h, x + 0.5 * h * k2)
    k4 = _call(fn, t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(f, t0: float, x0, F: VertexMultiMap | None = None, t1: float | None = None,
              step: float | None = None, bisect_tol: float = BISECT_TOL, max_steps: int = 5_000_000,
              control=None) -> Trajectory:
    """Solve x' = f(t, x), x(t0) = x0 with RK4 on the smooth pieces of f.

    Steps stop at every time break of the active piece and at cell crossings,
    which are located by bisection in the step length to `bisect_tol`.
    `control`, if given, maps (t, x) to a control vector recorded at each node.
    """
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    if t1 is None:
        if F is None:
            raise ValueError("need t1 or a multimap providing the horizon")
        t1 = F.horizon
    t = float(t0)
    if step is None:
        step = (t1 - t) / 256 if t1 > t else 1.0
    if F is not None and not F.in_tube(x)[0]:
        raise HypothesisError(f"initial state {x.tolist()} lies outside B(D, MT)")
    times, states, derivs, ctrls = [t], [x.copy()], [], []
    while t < t1:
        if len(times) > max_steps:
            raise RuntimeError(f"more than {max_steps} steps; the selection switches too often")
        ap = f.active(t, x)
        derivs.append(_call(ap.fn, t, x))
        if control is not None:
            ctrls.append(control(t, x))
        target = min(t1, ap.t_next)
        if target <= t:
            raise RuntimeError(f"selection reports no progress at t = {t!r}")
        h = min(step, target - t)
        t_new = target if h == target - t else t + h
        x_new = _rk4(ap.fn, t, x, h)
        if ap.margin is not None and ap.margin(t_new, x_new) <= 0:
            lo, hi = 0.0, h
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                if ap.margin(t + mid, _rk4(ap.fn, t, x, mid)) <= 0:
                    hi = mid
                else:
                    lo = mid
            h = hi
            t_new = max(t + hi, np.nextafter(t, math.inf))
            x_new = _rk4(ap.fn, t, x, h)
        if F is not None and not F.in_tube(x_new)[0]:
            raise HypothesisError(f"trajectory left B(D, MT) at t = {t_new}: {x_new.tolist()}")
        t, x = t_new, x_new
        times.append(t)
        states.append(x.copy())
    derivs.append(np.asarray(f.evaluate_many(np.array([t]), x[None]))[0])
    if control is not None:
        ctrls.append(control(t, x))
    return Trajectory(np.array(times), np.array(states), np.array(derivs), float(t0),
                      np.asarray(x0, dtype=float).reshape(-1), np.array(ctrls) if control is not None else None)


# quadrature along paths

@dataclass
class Quadrature:
    """Cumulative integral of an integrand along s -> (s, u(s)) at the step edges."""

    nodes: np.ndarray
    cumulative: np.ndarray
    error: float
    segments: int

    def total(self) -> np.ndarray:
        return self.cumulative[-1]


def _keys(selections, t, x):
    return np.concatenate([np.asarray(s.piece_keys(t, x)).reshape(np.atleast_1d(t).size, -1)
                           for s in selections], axis=1)


def path_quadrature(selections, u, integrand, t0: float, t1: float, speed: float,
                    resolution: int = 512, max_step: float | None = None,
                    lipschitz_factor: float = 1.0, jump: float = 0.0) -> Quadrature:
    """Composite midpoint rule with steps aligned to every piece change of the selections.

    integrand(values, s, x) receives the list of selection values at the
    midpoints. Q = sum L h^2 / 4 with L the path-Lipschitz constant of the
    integrand on a step, plus `jump` times the bisection tolerance per change.
    """
    breaks = [np.asarray(s.time_breaks(t0, t1)) for s in selections]
    breaks = np.unique(np.concatenate(breaks)) if breaks else np.empty(0)
    edges, _ = segment_path(lambda t, x: _keys(selections, t, x), breaks, u, t0, t1, resolution)
    lens = np.diff(edges)
    max_step = (t1 - t0) / resolution if max_step is None else max_step
    counts = np.maximum(1, np.ceil(lens / max_step - 1e-9).astype(int))
    seg = np.repeat(np.arange(lens.size), counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    idx = np.arange(seg.size) - first
    a = edges[seg] + idx * lens[seg] / counts[seg]
    b = np.where(idx + 1 == counts[seg], edges[seg + 1], edges[seg] + (idx + 1) * lens[seg] / counts[seg])
    mid = 0.5 * (a + b)
    X = u(mid)
    vals = [np.asarray(s.evaluate_many(mid, X)) for s in selections]
    w = np.asarray(integrand(vals, mid, X), dtype=float).reshape(mid.size, -1)
    cum = np.vstack([np.zeros((1, w.shape[1])), np.cumsum(w * (b - a)[:, None], axis=0)])
    L = lipschitz_factor * sum(s.path_lipschitz(speed) for s in selections)
    Q = float(L * np.sum((b - a) ** 2) / 4.0) + jump * BISECT_TOL * max(0, lens.size - 1)
    return Quadrature(np.concatenate([[t0], b]), cum, Q, int(lens.size))


def _difference(vals, s, x):
    return vals[0] - vals[1]


def _diff_and_norm(vals, s, x):
    d = vals[0] - vals[1]
    return np.column_stack([d, np.linalg.norm(d, axis=1)])


@dataclass
class PicardReport:
    distance: float
    error: float
    per_path: list


def picard_distance(f, g, paths, F: VertexMultiMap, resolution: int = 512) -> PicardReport:
    """max over paths and grid times of |int_0^t (f - g)(s, u(s)) ds|, with the quadrature bound."""
    per, err = [], 0.0
    for u in paths:
        q = path_quadrature([f, g], u, _difference, 0.0, F.horizon, F.bound, resolution, jump=2 * F.bound)
        per.append(float(np.max(np.linalg.norm(q.cumulative, axis=1))))
        err = max(err, q.error)
    return PicardReport(max(per, default=0.0), err, per)


def _max_pair_norm(C: np.ndarray, directions: int = 180) -> tuple[float, float]:
    """max over tau < tau' of |C(tau') - C(tau)|, as (estimate, upper bound).

    Exact in 1-d. Otherwise the estimate uses all pairs of points extreme in
    some sampled direction and the bound is the bounding-box diagonal.
    """
    if C.shape[1] == 1:
        c = C[:, 0]
        up = np.max(c - np.minimum.accumulate(c))
        down = np.max(np.maximum.accumulate(c) - c)
        v = float(max(up, down))
        return v, v
    upper = float(np.linalg.norm(C.max(axis=0) - C.min(axis=0)))
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(directions, C.shape[1]))
    proj = C @ dirs.T
    cand = np.unique(np.concatenate([np.argmax(proj, axis=0), np.argmin(proj, axis=0)]))
    P = C[cand]
    est = float(np.max(np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)))
    return est, upper


def strip_estimates(phi, g, paths, F: VertexMultiMap, eta: float, resolution: int = 512) -> list[dict]:
    """Residuals of the two interval estimates of a refinement along each path.

    r_mean = sup |int_tau^tau' (phi - g)|,  r_abs = sup (int_tau^tau' |phi - g| - eta (tau' - tau)).
    """
    out = []
    for u in paths:
        q = path_quadrature([phi, g], u, _diff_and_norm, 0.0, F.horizon, F.bound, resolution, jump=2 * F.bound)
        C = q.cumulative
        D = C[:, -1] - eta * q.nodes
        r_abs = float(np.max(D - np.minimum.accumulate(D)))
        est, upper = _max_pair_norm(C[:, :-1])
        out.append({"r_mean": est, "r_mean_upper": upper, "r_abs": r_abs, "Q": q.error, "segments": q.segments})
    return out


class HCache:
    """h(y, F(t, x)) with the canonical vertex set and values memoized (cheap for constant F)."""

    def __init__(self, F: VertexMultiMap):
        self.F = F
        self._poly: dict = {}
        self._h: dict = {}

    def polytope(self, V: np.ndarray) -> Polytope:
        key = V.tobytes()
        P = self._poly.get(key)
        if P is None:
            P = Polytope(V[extreme_indices(V)], canonical=True)
            self._poly[key] = P
        return P

    def __call__(self, t, x, y) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        V = self.F.vertex_values(t, x)
        y = np.asarray(y, dtype=float).reshape(t.size, -1)
        out = np.empty(t.size)
        for k in range(t.size):
            key = (V[k].tobytes(), y[k].tobytes())
            val = self._h.get(key)
            if val is None:
                val = h_value(y[k], self.polytope(V[k]))
                self._h[key] = val
            out[k] = val
        return out


def h_integral(f, F: VertexMultiMap, u, cache: HCache | None = None, resolution: int = 512) -> float:
    """int_0^T h(f(s, u(s)), F(s, u(s))) ds by the aligned midpoint rule."""
    cache = cache or HCache(F)
    q = path_quadrature([f], u, lambda v, s, x: cache(s, x, v[0]), 0.0, F.horizon, F.bound, resolution)
    return float(q.total()[0])


# nested selections f_k

class SelectionNode:
    """A refinement together with the refinements of its pieces one level down."""

    def __init__(self, sel: PiecewiseSelection):
        self.sel = sel
        self.children: dict[tuple[int, int], SelectionNode] = {}

    def leaves(self):
        return [(i, int(j)) for i, c in enumerate(self.sel.cells) for j in c.positive]

    def nodes_at(self, depth: int):
        if depth == 1:
            yield self
            return
        for child in self.children.values():
            yield from child.nodes_at(depth - 1)

    def to_json(self, max_depth: int | None = None) -> dict:
        out = self.sel.to_json()
        if max_depth is None or max_depth > 1:
            out["children"] = [
                {"cell": c, "slot": j, "selection": child.to_json(None if max_depth is None else max_depth - 1)}
                for (c, j), child in sorted(self.children.items())
            ]
        return out


class NestedSelection:
    """f_k: descend k levels of refinements; pieces are keyed by (cell, slot) per level."""

    def __init__(self, root: SelectionNode, depth: int, F: VertexMultiMap):
        if depth < 1:
            raise ValueError("depth must be at least 1")
        self.root = root
        self.depth = depth
        self.F = F
        self.dim = F.dim

    def _walk(self, t, x, want_values: bool):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.asarray(x, dtype=float).reshape(t.size, self.dim)
        keys = np.zeros((t.size, 2 * self.depth), dtype=np.int64)
        vals = np.zeros((t.size, self.dim)) if want_values else None

        def rec(node, level, idx):
            cells, slots = node.sel.locate(t[idx], x[idx])
            if np.any(cells < 0):
                k = idx[int(np.flatnonzero(cells < 0)[0])]
                raise NotCoveredError(f"({t[k]}, {x[k].tolist()}) is not covered at level {level + 1}")
            keys[idx, 2 * level] = cells
            keys[idx, 2 * level + 1] = slots
            code = cells * node.sel.slots + slots
            for c in np.unique(code):
                sub = idx[code == c]
                cell, slot = int(c // node.sel.slots), int(c % node.sel.slots)
                if level + 1 == self.depth:
                    if want_values:
                        vals[sub] = node.sel.piece(cell, slot)(t[sub], x[sub])
                else:
                    rec(node.children[(cell, slot)], level + 1, sub)

        rec(self.root, 0, np.arange(t.size))
        return keys, vals

    def evaluate_many(self, t, x) -> np.ndarray:
        return self._walk(t, x, True)[1]

    __call__ = evaluate_many

    def evaluate(self, t: float, x) -> np.ndarray:
        return self.evaluate_many(np.array([float(t)]), np.asarray(x, dtype=float).reshape(1, -1))[0]

    def piece_keys(self, t, x) -> np.ndarray:
        return self._walk(t, x, False)[0]

    def time_breaks(self, t0: float, t1: float) -> np.ndarray:
        parts = [np.empty(0)]
        for d in range(1, self.depth + 1):
            parts.extend(node.sel.time_breaks(t0, t1) for node in self.root.nodes_at(d))
        b = np.unique(np.concatenate(parts))
        return b[(b > t0) & (b < t1)]

    def active(self, t: float, x) -> ActivePiece:
        node, key, t_next, margins = self.root, (), math.inf, []
        for level in range(self.depth):
            ap = node.sel.active(t, x)
            key += ap.key
            t_next = min(t_next, ap.t_next)
            if ap.margin is not None:
                margins.append(ap.margin)
            if level + 1 < self.depth:
                node = node.children[ap.key]
        if not margins:
            margin = None
        elif len(margins) == 1:
            margin = margins[0]
        else:
            def margin(s, y, ms=tuple(margins)):
                return min(m(s, y) for m in ms)
        return ActivePiece(key, ap.fn, t_next, margin)

    def path_lipschitz(self, speed: float) -> float:
        return self.F.max_lipschitz_t + self.F.max_lipschitz_x * speed


class Shifted:
    """f + c, keeping the switching structure of f (a perturbation for stability probes)."""

    def __init__(self, f, c):
        self.f = f
        self.c = np.asarray(c, dtype=float).reshape(-1)
        self.dim = self.c.size

    def evaluate_many(self, t, x):
        return np.asarray(self.f.evaluate_many(t, x)) + self.c

    __call__ = evaluate_many

    def piece_keys(self, t, x):
        return self.f.piece_keys(t, x)

    def time_breaks(self, t0, t1):
        return self.f.time_breaks(t0, t1)

    def path_lipschitz(self, speed):
        return self.f.path_lipschitz(speed)

    def active(self, t, x):
        ap = self.f.active(t, x)
        fn, c = ap.fn, self.c
        shifted = FunctionMap(lambda s, y: fn(s, y) + c, self.dim, fn.lipschitz_t, fn.lipschitz_x)
        return ActivePiece(ap.key, shifted, ap.t_next, ap.margin)


# the iteration

@dataclass
class LevelRecord:
    level: int
    eps: float
    delta: float
    cells: int
    pieces: int
    strips: int
    exact: bool
    max_slope: float
    crossings_measured: int = 0
    crossings: int = 0
    picard: float = 0.0
    picard_error: float = 0.0
    l1_drift: float = 0.0
    h_integral: float = 0.0
    h_bound: float = 0.0
    violations: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def h_bound(K: int, T: float) -> float:
    """Closed form of 2^(1-K) T + 2^-K + sum_{l > K} (2^-l + 2^(1-l) T)."""
    return 2.0 ** (2 - K) * T + 2.0 ** (1 - K)


@dataclass
class IterationState:
    F: VertexMultiMap
    f0: LipschitzMap
    eps0: float
    delta0: float
    eta0: float
    seed: int
    levels: list = field(default_factory=list)
    root: SelectionNode | None = None
    status: str = "ok"
    reason: str = ""
    h0: float = 0.0

    @property
    def K(self) -> int:
        return len(self.levels)

    def selection(self, k: int | None = None):
        k = self.K if k is None else k
        if k == 0:
            return self.f0
        if k > self.K:
            raise ValueError(f"only {self.K} levels were built")
        return NestedSelection(self.root, k, self.F)

    @property
    def final(self):
        return self.selection(self.K)

    def schedule(self) -> dict:
        return {"eps": [r.eps for r in self.levels], "delta": [r.delta for r in self.levels],
                "N": [r.crossings for r in self.levels]}

    def to_json(self, include_tree: bool = True) -> dict:
        out = {
            "status": self.status, "reason": self.reason, "seed": self.seed,
            "eps0": self.eps0, "delta0": self.delta0, "eta0": self.eta0, "levels_built": self.K,
            "h_integral_f0": self.h0,
            "levels": [r.to_json() for r in self.levels],
            "picard_total": float(sum(r.picard for r in self.levels)),
        }
        if include_tree and self.root is not None:
            out["selection"] = self.root.to_json()
        return out


def check_selection(F: VertexMultiMap, f0, samples: int = 200, seed: int = 0, tol: float = 1e-9) -> dict:
    """Sampled check that f0 is bounded by M and lies in co F on [0, T] x B(D, MT)."""
    rng = np.random.default_rng(seed)
    box = F.tube_box()
    t = rng.random(samples) * F.horizon
    x = box.lo + rng.random((samples, F.dim)) * (box.hi - box.lo)
    y = np.asarray(f0.evaluate_many(t, x))
    V = F.vertex_values(t, x)
    inside = all(contains(Polytope(V[k]), y[k], tol) for k in range(samples))
    return {"bounded": bool(np.all(np.linalg.norm(y, axis=1) <= F.bound + tol)), "selection": bool(inside)}


def sample_paths(F: VertexMultiMap, count: int, seed: int) -> list[LipschitzPath]:
    seeds = np.random.default_rng(seed).integers(0, 2 ** 63 - 1, size=count)
    return [random_path(F, int(s)) for s in seeds]


def _max_h(F, f0, seed, samples=64):
    rng = np.random.default_rng(seed + 1)
    box = F.tube_box()
    t = rng.random(samples) * F.horizon
    x = box.lo + rng.random((samples, F.dim)) * (box.hi - box.lo)
    return float(np.max(HCache(F)(t, x, f0.evaluate_many(t, x))))


def build_extremal(F: VertexMultiMap, f0: LipschitzMap, eps0: float, K: int, paths: int = 50, seed: int = 0,
                   target: float | None = None, h_paths: int = 20, trajectory_grid: int = 5,
                   resolution: int = 512, max_cells: int | None = None) -> IterationState:
    """Refine f0 level by level into selections f_1, ..., f_K with values near ext F.

    Level k+1 refines every piece of f_k on the bounding box of its cell, with
    eps_{k+1} = min(delta_k / (2 N_k), 2^-k / N_k, 2^-k / (N_k max|a|)), where
    delta_k = delta0 2^-k, delta0 = eps0 exp(-L T) (L the x-Lipschitz constant
    of f0) and N_k is twice the largest number of pieces crossed by a sampled path.
    """
    if eps0 <= 0 or K < 0:
        raise ValueError("need eps0 > 0 and K >= 0")
    chk = check_selection(F, f0, seed=seed)
    if not (chk["bounded"] and chk["selection"]):
        raise HypothesisError(f"f0 is not a bounded selection of co F: {chk}")
    T = F.horizon
    delta0 = eps0 * math.exp(-f0.lipschitz_x * T)
    eta0 = _max_h(F, f0, seed) + 1e-9
    state = IterationState(F, f0, eps0, delta0, eta0, seed)
    Y = sample_paths(F, paths, seed)
    cache = HCache(F)
    hY = Y[:h_paths]
    state.h0 = max((h_integral(f0, F, u, cache, resolution) for u in hY), default=0.0)
    grid = F.seed_set.grid(trajectory_grid) if trajectory_grid else np.empty((0, F.dim))
    kw = {} if max_cells is None else {"max_cells": max_cells}
    S = SpaceTimeBox(0.0, T, F.tube_box())
    eps_next = delta0 / 2.0
    for k in range(1, K + 1):
        if not eps_next >= EPS_FLOOR:
            state.status, state.reason = "schedule_infeasible", f"eps_{k} = {eps_next:.3e} underflows"
            break
        delta_k = delta0 * 2.0 ** (-k)
        try:
            if k == 1:
                state.root = SelectionNode(refine(S, F, f0, eta0, eps_next, **kw))
                built = [state.root.sel]
            else:
                built = []
                eta = state.levels[-1].eps * (1 + 1e-9) + 1e-12
                for node in list(state.root.nodes_at(k - 1)):
                    for cell, slot in node.leaves():
                        child = refine(node.sel.cover.cell_box(cell), F, node.sel.piece(cell, slot), eta, eps_next, **kw)
                        node.children[(cell, slot)] = SelectionNode(child)
                        built.append(child)
        except CoverError as exc:
            state.status, state.reason = "schedule_infeasible", f"level {k}: {exc}"
            _drop_level(state, k)
            break
        strips = max(s.N for s in built)
        if strips > STRIP_CEIL:
            state.status, state.reason = "schedule_infeasible", f"level {k} needs {strips} strips"
            _drop_level(state, k)
            break
        rec = LevelRecord(level=k, eps=eps_next, delta=delta_k, cells=sum(s.nu for s in built),
                          pieces=sum(int(c.positive.size) for s in built for c in s.cells), strips=strips,
                          exact=all(s.exact for s in built), max_slope=max(s.max_slope() for s in built),
                          violations=sum(len(s.violations) for s in built))
        state.levels.append(rec)
        fk, fprev = state.selection(k), state.selection(k - 1)
        trajectories = [integrate(fk, 0.0, x0, F).as_path(F.bound) for x0 in grid]
        crossings, picard, perr, l1 = 1, 0.0, 0.0, 0.0
        for u in list(Y) + trajectories:
            q = path_quadrature([fk, fprev], u, _diff_and_norm, 0.0, T, F.bound, resolution, jump=2 * F.bound)
            crossings = max(crossings, q.segments)
            picard = max(picard, float(np.max(np.linalg.norm(q.cumulative[:, :-1], axis=1))))
            perr = max(perr, q.error)
            l1 = max(l1, float(q.cumulative[-1, -1]))
        rec.crossings_measured = crossings
        rec.crossings = 2 * crossings
        rec.picard, rec.picard_error, rec.l1_drift = picard, perr, l1
        rec.h_integral = max((h_integral(fk, F, u, cache, resolution) for u in hY), default=0.0)
        rec.h_bound = h_bound(k, T)
        N = rec.crossings
        cands = [delta_k / (2 * N), 2.0 ** (-k) / N]
        if rec.max_slope > 0:
            cands.append(2.0 ** (-k) / (N * rec.max_slope))
        eps_next = min(cands)
        if target is not None and rec.h_integral < target:
            break
    return state


def _drop_level(state: IterationState, k: int):
    if k == 1:
        state.root = None
        return
    for node in state.root.nodes_at(k - 1):
        node.children.clear()


# stability and homotopy

def stability_probe(f, perturbations, F: VertexMultiMap, initial, paths, t0: float = 0.0,
                    resolution: int = 512) -> dict:
    """Trajectory response to Picard-close perturbations of f over a grid of initial states."""
    base = [integrate(f, t0, x0, F) for x0 in initial]
    rows = []
    for g in perturbations:
        d = picard_distance(f, g, paths, F, resolution)
        dist = max((b.sup_distance(integrate(g, t0, x0, F)) for b, x0 in zip(base, initial)), default=0.0)
        rows.append({"picard": d.distance, "picard_error": d.error, "trajectory": dist})
    order = sorted(rows, key=lambda r: r["picard"])
    mono = all(order[i]["trajectory"] <= order[i + 1]["trajectory"] + 1e-9 for i in range(len(order) - 1))
    return {"rows": rows, "monotone": mono}


def is_solution(v: Trajectory, F: VertexMultiMap, tol: float = 1e-9) -> bool:
    """Sampled membership of the recorded derivatives of v in F(t, v(t))."""
    V = F.vertex_values(v.times, v.states)
    return all(contains(Polytope(V[k]), v.derivatives[k], tol) for k in range(v.times.size))


def homotopy(v: Trajectory, lam: float, f, F: VertexMultiMap, check: bool = True, step: float | None = None) -> Trajectory:
    """Follow v on [0, lam T], then the f-flow from (lam T, v(lam T)) on [lam T, T]."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if check and not is_solution(v, F):
        raise ValueError("v is not a trajectory of the inclusion")
    T = F.horizon
    if lam == 1.0:
        return v
    split = lam * T
    if lam == 0.0:
        return integrate(f, v.t0, v.x0, F, step=step)
    keep = v.times < split
    head_t = v.times[keep]
    x_split = v(split)[0]
    tail = integrate(f, split, x_split, F, step=step)
    return Trajectory(np.concatenate([head_t, tail.times]), np.vstack([v.states[keep], tail.states]),
                      np.vstack([v.derivatives[keep], tail.derivatives]), v.t0, v.x0)
