"""Property checks shared by the `verify` command and the acceptance suite.

Each check returns a CriterionResult; nothing here loosens a tolerance to
make a check pass.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .control import closed_loop, synthesize
from .flow import (IterationState, build_extremal, h_bound, homotopy, integrate, sample_paths,
                   strip_estimates)
from .geometry import Polytope, canonicalize, chebyshev
from .multimap import VertexMultiMap
from .scenario import Scenario, benchmark
from .selection import SpaceTimeBox, refine
from .variance import h_value

INTEGRATION_TOL = 1e-6


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    elapsed: float = 0.0
    limit: float = math.inf
    skipped: bool = False

    @property
    def status(self) -> str:
        return "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")

    def line(self) -> str:
        return f"[{self.status}] criterion {self.number}: {self.name}"

    def to_json(self) -> dict:
        return {"criterion": self.number, "name": self.name, "status": self.status, "detail": self.detail}


def _timed(number, name, limit, fn, *args, **kw) -> CriterionResult:
    start = time.perf_counter()
    passed, detail = fn(*args, **kw)
    elapsed = time.perf_counter() - start
    # the runtime budget is part of the criterion
    return CriterionResult(number, name, bool(passed) and elapsed <= limit, detail, elapsed, limit)


def random_polytope(rng: np.random.Generator, max_dim: int = 3, max_vertices: int = 8) -> Polytope:
    """Canonical polytope from random points; at least dim + 1 of them, full-dimensional."""
    while True:
        n = int(rng.integers(1, max_dim + 1))
        m = int(rng.integers(n + 1, max_vertices + 1))
        V = rng.normal(size=(m, n))
        if np.linalg.matrix_rank(V[1:] - V[0]) == n:
            return canonicalize(Polytope(V))


def _contained_point(rng, P: Polytope) -> np.ndarray:
    return rng.dirichlet(np.ones(len(P)) * 0.7) @ P.vertices


# generic laws of h

def extreme_point_law(seed: int = 0, count: int = 200):
    rng = np.random.default_rng(seed)
    worst_vertex, worst_ratio = 0.0, math.inf
    for _ in range(count):
        P = random_polytope(rng)
        for v in P.vertices:
            worst_vertex = max(worst_vertex, h_value(v, P))
        for i, j in itertools.combinations(range(len(P)), 2):
            a, b = P.vertices[i], P.vertices[j]
            worst_ratio = min(worst_ratio, h_value(0.5 * (a + b), P) / np.linalg.norm(a - b))
    ok = worst_vertex <= 1e-7 and worst_ratio > 1e-4
    return ok, {"max_h_at_vertices": worst_vertex, "min_h_over_edge_length": worst_ratio}


def chebyshev_bound(seed: int = 0, count: int = 500):
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(count):
        P = random_polytope(rng)
        c, r = chebyshev(P)
        y = _contained_point(rng, P)
        worst = max(worst, h_value(y, P) ** 2 - (r * r - float(np.sum((y - c) ** 2))))
    return worst <= 1e-7, {"max_excess": worst}


def concavity(seed: int = 0, count: int = 500):
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(count):
        P = random_polytope(rng)
        y1, y2 = _contained_point(rng, P), _contained_point(rng, P)
        gap = 0.5 * (h_value(y1, P) + h_value(y2, P)) - h_value(0.5 * (y1 + y2), P)
        worst = max(worst, gap)
    return worst <= 1e-7, {"max_midpoint_deficit": worst}


def _barycentric_grid(res: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(res + 1), np.arange(res + 1), indexing="ij")
    keep = i + j <= res
    i, j = i[keep], j[keep]
    return np.stack([i, j, res - i - j], axis=1) / res


def oracle_equivalence(seed: int = 0, count: int = 50, res: int = 50, points: int = 10):
    """LP value against a brute-force maximum over a barycentric weight grid on triangles."""
    rng = np.random.default_rng(seed)
    W = _barycentric_grid(res)
    worst = 0.0
    for _ in range(count):
        while True:
            V = rng.normal(size=(3, 2))
            if abs(np.linalg.det(V[1:] - V[0])) > 1e-2:
                break
        P = Polytope(V)
        Y = W @ V
        var = W @ np.sum(V * V, axis=1)
        for k in rng.choice(len(W), size=points, replace=False):
            y = Y[k]
            feasible = np.linalg.norm(Y - y, axis=1) <= 1e-12
            brute = math.sqrt(max(float(np.max(var[feasible])) - float(y @ y), 0.0))
            worst = max(worst, abs(h_value(y, P) - brute))
    return worst <= 2e-2, {"max_abs_difference": worst}


# refinement estimates

def refinement_estimates(scenario: Scenario, eps: float | None = None, paths: int = 50, seed: int = 0):
    F, phi = scenario.F, scenario.f0
    eps = scenario.param("refine_eps") if eps is None else eps
    S = SpaceTimeBox(0.0, F.horizon, F.tube_box())
    eta = _sup_h(F, phi, seed) + 1e-9
    g = refine(S, F, phi, eta, eps)
    rows = strip_estimates(phi, g, sample_paths(F, paths, seed), F, eta)
    mean_excess = max(r["r_mean_upper"] - (eps + r["Q"]) for r in rows)
    abs_excess = max(r["r_abs"] - (eps + r["Q"]) for r in rows)
    detail = {"eps": eps, "eta": eta, "cells": g.nu, "strips": g.N,
              "max_mean_residual": max(r["r_mean_upper"] for r in rows),
              "max_abs_residual": max(r["r_abs"] for r in rows), "max_Q": max(r["Q"] for r in rows),
              "certificate_violations": len(g.violations)}
    return mean_excess <= 0 and abs_excess <= 0 and not g.violations, detail


def _sup_h(F: VertexMultiMap, phi, seed: int, samples: int = 200) -> float:
    rng = np.random.default_rng(seed)
    box = F.tube_box()
    t = rng.random(samples) * F.horizon
    x = box.lo + rng.random((samples, F.dim)) * (box.hi - box.lo)
    y = phi.evaluate_many(t, x)
    V = F.vertex_values(t, x)
    return max(h_value(y[k], Polytope(V[k])) for k in range(samples))


# the iteration

def build_state(scenario: Scenario, levels: int | None = None, paths: int | None = None,
                seed: int | None = None) -> IterationState:
    return build_extremal(scenario.F, scenario.f0, scenario.param("eps0"),
                          scenario.param("levels") if levels is None else levels,
                          paths=scenario.param("paths") if paths is None else paths,
                          seed=scenario.param("seed") if seed is None else seed,
                          h_paths=scenario.param("h_paths"))


def convergence(state: IterationState, K: int = 8, fraction: float = 0.02):
    T = state.F.horizon
    if state.K < K:
        return False, {"levels_built": state.K, "status": state.status, "reason": state.reason}
    last = state.levels[K - 1]
    hs = [r.h_integral for r in state.levels[:K]]
    ok = last.h_integral <= fraction * T and last.h_integral <= h_bound(K, T)
    return ok, {"h_integral": last.h_integral, "target": fraction * T, "bound": h_bound(K, T),
                "h_integral_f0": state.h0, "by_level": hs,
                "non_increasing": all(b <= a + 1e-12 for a, b in zip([state.h0] + hs, hs))}


def initial_grid(F: VertexMultiMap, count: int = 5) -> list[tuple[float, np.ndarray]]:
    """count start times in [0, T) times count seed points."""
    times = np.linspace(0.0, F.horizon, count, endpoint=False)
    D = F.seed_set
    if D.box is None:
        pts = D.points[:count]
    elif F.dim == 1:
        pts = np.linspace(D.box.lo, D.box.hi, count)
    else:
        lo, hi = D.box.lo, D.box.hi
        corners = np.array(list(itertools.product(*zip(lo, hi))))
        pts = np.vstack([0.5 * (lo + hi), corners])[:count]
        if len(pts) < count:
            extra = lo + np.random.default_rng(0).random((count - len(pts), F.dim)) * (hi - lo)
            pts = np.vstack([pts, extra])
    return [(float(t), np.asarray(p, dtype=float)) for t in times for p in pts]


def closeness(state: IterationState, count: int = 5, tol: float = INTEGRATION_TOL):
    F, f, f0 = state.F, state.final, state.f0
    worst = 0.0
    for t0, x0 in initial_grid(F, count):
        x = integrate(f, t0, x0, F)
        y = integrate(f0, t0, x0, F)
        worst = max(worst, x.sup_distance(y))
    return worst <= state.eps0 + tol, {"max_sup_distance": worst, "eps0": state.eps0, "tolerance": tol}


def flow_continuity(state: IterationState, x0=None, deltas=(1e-2, 1e-3, 1e-4), factor: float = 10.0):
    F, f = state.F, state.final
    x0 = F.seed_set.grid(1)[0] if x0 is None else np.asarray(x0, dtype=float)
    e = np.zeros(F.dim)
    e[0] = 1.0
    base = integrate(f, 0.0, x0, F)
    again = integrate(f, 0.0, x0, F)
    identical = bool(np.array_equal(base.times, again.times) and np.array_equal(base.states, again.states))
    dists = [base.sup_distance(integrate(f, 0.0, x0 + d * e, F)) for d in deltas]
    mono = all(dists[i + 1] <= dists[i] + 1e-9 for i in range(len(dists) - 1))
    small = all(dist <= factor * d for dist, d in zip(dists, deltas))
    return identical and mono and small, {"deltas": list(deltas), "distances": dists, "bit_identical": identical}


def bang_bang(scenario: Scenario, count: int = 5, tol: float = INTEGRATION_TOL, levels: int | None = None,
              paths: int | None = None):
    sys, fb_spec = scenario.system, scenario.feedback
    eps0 = scenario.param("eps0")
    fb = synthesize(sys, fb_spec, eps0, scenario.param("levels") if levels is None else levels,
                    paths=scenario.param("paths") if paths is None else paths, seed=scenario.param("seed"),
                    h_paths=scenario.param("h_paths"))
    U = {tuple(u) for u in sys.controls.tolist()}
    pure, worst_track, worst_consistency = True, 0.0, 0.0
    for t0, x0 in initial_grid(fb.F, count):
        x = closed_loop(sys, fb, t0, x0)
        pure &= all(tuple(u) in U for u in x.controls.tolist())
        y = integrate(fb.f0, t0, x0, fb.F)
        worst_track = max(worst_track, x.sup_distance(y))
        # g(t, x, u_bar) must reproduce f at every node of the closed loop
        direct = fb.f.evaluate_many(x.times, x.states)
        worst_consistency = max(worst_consistency, float(np.max(np.abs(direct - x.derivatives))))
    ok = pure and worst_track <= eps0 + tol and worst_consistency <= 1e-9
    return ok, {"controls_in_U": pure, "max_tracking": worst_track, "eps0": eps0,
                "closed_loop_vs_f": worst_consistency, "levels": fb.state.K, "status": fb.state.status}


def homotopy_endpoints(state: IterationState, x_bar=None, sweep: int = 0):
    """lambda = 1 gives v and lambda = 0 the extremal trajectory; `sweep` > 0 adds adjacent-lambda distances."""
    F, f = state.F, state.final
    x_bar = F.seed_set.grid(1)[0] if x_bar is None else np.asarray(x_bar, dtype=float)
    v = integrate(state.f0, 0.0, x_bar, F)
    one = homotopy(v, 1.0, f, F)
    zero = homotopy(v, 0.0, f, F)
    ref = integrate(f, 0.0, x_bar, F)
    d1 = float(np.max(np.abs(one.states - v.states))) if one.states.shape == v.states.shape else math.inf
    d0 = float(np.max(np.abs(zero.states - ref.states))) if zero.states.shape == ref.states.shape else math.inf
    detail = {"lambda1_vs_v": d1, "lambda0_vs_flow": d0}
    if sweep > 0:
        runs = [homotopy(v, float(l), f, F) for l in np.linspace(0, 1, sweep + 1)]
        detail["adjacent_sweep_distances"] = [runs[i].sup_distance(runs[i + 1]) for i in range(sweep)]
    return d1 <= 1e-9 and d0 <= 1e-9, detail


# drivers

def hypotheses(scenario: Scenario, seed: int = 0) -> CriterionResult:
    start = time.perf_counter()
    rep = scenario.F.check_hypotheses(seed=seed)
    ok = rep["bound_ok"] and rep["lipschitz_ok"] and rep["tube_in_domain"]
    return CriterionResult(0, "standing hypotheses (bound, Lipschitz, tube in domain)", ok, rep,
                           time.perf_counter() - start)


def run_generic(seed: int = 0) -> list[CriterionResult]:
    return [
        _timed(1, "extreme-point law of h", 10, extreme_point_law, seed),
        _timed(2, "Chebyshev bound on h", 10, chebyshev_bound, seed),
        _timed(3, "midpoint concavity of h", 10, concavity, seed),
        _timed(4, "LP value vs barycentric brute force", 30, oracle_equivalence, seed),
    ]


def run_scenario(scenario: Scenario, seed: int | None = None, levels: int | None = None,
                 paths: int | None = None) -> list[CriterionResult]:
    """Every criterion that applies to one scenario, numbered as in the acceptance suite."""
    seed = scenario.param("seed") if seed is None else seed
    out = [hypotheses(scenario, seed)]
    if not out[0].passed:
        return out
    out += run_generic(seed)
    out.append(_timed(5, "refinement interval estimates", 60, refinement_estimates, scenario,
                      paths=paths or scenario.param("paths"), seed=seed))
    if scenario.kind == "control":
        out.append(_timed(9, "bang-bang synthesis", 30, bang_bang, scenario, levels=levels, paths=paths))
    K = scenario.param("levels") if levels is None else levels
    state = build_state(scenario, K, paths, seed)
    if K >= 1:
        out.append(_timed(6, "h-integral after K levels", 300, convergence, state, K=K))
    out.append(_timed(7, "closeness of f_K and f0 trajectories", 120, closeness, state))
    out.append(_timed(8, "continuous dependence on initial data", 60, flow_continuity, state))
    out.append(_timed(10, "homotopy endpoints", 10, homotopy_endpoints, state))
    out.sort(key=lambda r: r.number)
    return out
