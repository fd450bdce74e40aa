"""Polytope-valued multifunctions given by finitely many Lipschitz vertex maps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Polytope, caratheodory, extreme_indices

LIPSCHITZ_SAMPLES = 100_000
LIPSCHITZ_SAFETY = 1.5


class DomainError(ValueError):
    pass


class HypothesisError(RuntimeError):
    """A standing assumption (bound, Lipschitz constant, domain inclusion) fails."""


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("box needs matching min <= max arrays")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    def inflate(self, r: float) -> "Box":
        return Box(self.lo - r, self.hi + r)

    def contains(self, x, tol=1e-12) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def to_json(self):
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}


class SeedSet:
    """The compact set D of initial states: a box or a finite list of points."""

    def __init__(self, box: Box | None = None, points=None):
        if (box is None) == (points is None):
            raise ValueError("seed set is either a box or a point list")
        self.box = box
        self.points = None if points is None else np.atleast_2d(np.asarray(points, dtype=float))

    @property
    def dim(self):
        return self.box.dim if self.box is not None else self.points.shape[1]

    def bounding_box(self) -> Box:
        if self.box is not None:
            return self.box
        return Box(self.points.min(axis=0), self.points.max(axis=0))

    def distance(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.box is not None:
            return np.linalg.norm(x - np.clip(x, self.box.lo, self.box.hi), axis=1)
        d = np.linalg.norm(x[:, None, :] - self.points[None, :, :], axis=2)
        return d.min(axis=1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.box is not None:
            return self.box.lo + rng.random(self.dim) * (self.box.hi - self.box.lo)
        return self.points[rng.integers(len(self.points))].copy()

    def grid(self, count: int) -> np.ndarray:
        """About `count` points of D spread over it (all points for a point list)."""
        if self.box is None:
            return self.points.copy()
        n = self.dim
        per_axis = max(1, int(round(count ** (1.0 / n))))
        axes = [np.linspace(lo, hi, per_axis) if per_axis > 1 else np.array([0.5 * (lo + hi)])
                for lo, hi in zip(self.box.lo, self.box.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def to_json(self):
        if self.box is not None:
            return self.box.to_json()
        return {"points": self.points.tolist()}


@dataclass(frozen=True)
class ActivePiece:
    """The smooth piece a selection uses from (t, x) forward.

    It stays valid until `t_next` or until `margin(t, x)` becomes nonpositive,
    whichever comes first.
    """

    key: tuple
    fn: "LipschitzMap"
    t_next: float
    margin: Callable | None = None


class LipschitzMap:
    """Vectorized map (t, x) -> R^n with separate Lipschitz constants in t and in x.

    Also a (single-piece) selection: it has no switching times and no cells.
    """

    dim: int
    lipschitz_t: float
    lipschitz_x: float

    def __call__(self, t, x) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, t: float, x) -> np.ndarray:
        return self(np.array([float(t)]), np.asarray(x, dtype=float).reshape(1, -1))[0]

    @property
    def lipschitz(self) -> float:
        return max(self.lipschitz_t, self.lipschitz_x)

    def path_lipschitz(self, speed: float) -> float:
        """Lipschitz constant of s -> self(s, u(s)) for paths of the given speed."""
        return self.lipschitz_t + self.lipschitz_x * speed

    def vertex_index(self) -> int | None:
        """Index of the vertex map this equals, if it is a single one."""
        return None

    def evaluate_many(self, t, x) -> np.ndarray:
        return self(t, x)

    def piece_keys(self, t, x) -> np.ndarray:
        return np.zeros((np.atleast_1d(t).size, 0), dtype=np.int64)

    def time_breaks(self, t0: float, t1: float) -> np.ndarray:
        return np.empty(0)

    def active(self, t: float, x) -> ActivePiece:
        return ActivePiece((), self, math.inf, None)


class FunctionMap(LipschitzMap):
    def __init__(self, fn: Callable, dim: int, lipschitz_t: float, lipschitz_x: float, label: str = ""):
        self.fn = fn
        self.dim = dim
        self.lipschitz_t = float(lipschitz_t)
        self.lipschitz_x = float(lipschitz_x)
        self.label = label

    def __call__(self, t, x):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.asarray(self.fn(t, np.asarray(x, dtype=float).reshape(t.size, self.dim)), dtype=float)

    def __repr__(self):
        return f"FunctionMap({self.label or self.fn!r})"


class ConstantMap(LipschitzMap):
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float).reshape(-1)
        self.dim = self.value.size
        self.lipschitz_t = 0.0
        self.lipschitz_x = 0.0

    def __call__(self, t, x):
        t = np.atleast_1d(t)
        return np.broadcast_to(self.value, (t.size, self.dim)).copy()

    def __repr__(self):
        return f"ConstantMap({self.value.tolist()})"


def estimate_lipschitz(fn, dim: int, horizon: float, domain: Box, samples: int = LIPSCHITZ_SAMPLES,
                       safety: float = LIPSCHITZ_SAFETY, seed: int = 0) -> tuple[float, float]:
    """Sampled Lipschitz constants (in t, in x) of a vectorized map, times a safety factor.

    Perturbations are log-uniform over four decades of the domain extent, so
    both local and global slopes get probed.
    """
    rng = np.random.default_rng(seed)
    half = samples // 2
    extent = max(float(np.max(domain.hi - domain.lo)), horizon, 1e-12)

    def draw(k):
        t = rng.random(k) * horizon
        x = domain.lo + rng.random((k, dim)) * (domain.hi - domain.lo)
        return t, x

    def scales(k):
        return extent * 10.0 ** rng.uniform(-4, 0, size=k)

    t, x = draw(half)
    dt = scales(half) * rng.choice([-1.0, 1.0], size=half)
    t2 = np.clip(t + dt, 0.0, horizon)
    ok = np.abs(t2 - t) > 1e-12
    lt = 0.0
    if horizon > 0 and np.any(ok):
        q = np.linalg.norm(fn(t2[ok], x[ok]) - fn(t[ok], x[ok]), axis=1) / np.abs(t2[ok] - t[ok])
        lt = float(np.max(q[np.isfinite(q)], initial=0.0))

    t, x = draw(half)
    direction = rng.normal(size=(half, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    x2 = np.clip(x + direction * scales(half)[:, None], domain.lo, domain.hi)
    gap = np.linalg.norm(x2 - x, axis=1)
    ok = gap > 1e-12
    lx = 0.0
    if np.any(ok):
        q = np.linalg.norm(fn(t[ok], x2[ok]) - fn(t[ok], x[ok]), axis=1) / gap[ok]
        lx = float(np.max(q[np.isfinite(q)], initial=0.0))
    return safety * lt, safety * lx


class VertexMultiMap:
    """F(t, x) = co{v_1(t, x), ..., v_m(t, x)} on [0, T] x Omega.

    Parameters
    ----------
    maps : vectorized callables (t of shape (P,), x of shape (P, n)) -> (P, n)
    horizon : T
    domain : the box Omega
    seed_set : the compact set D of initial states
    bound : M with |v_i| <= M
    lipschitz : per map, a pair (L_t, L_x), a scalar used for both, or None to estimate
    """

    def __init__(self, maps: Sequence[Callable], dim: int, horizon: float, domain: Box, seed_set: SeedSet,
                 bound: float, lipschitz=None, names: Sequence[str] | None = None, lipschitz_seed: int = 0):
        if not maps:
            raise ValueError("need at least one vertex map")
        if domain.dim != dim or seed_set.dim != dim:
            raise ValueError("domain and seed set must have the multimap's dimension")
        if horizon <= 0 or bound < 0:
            raise ValueError("horizon must be positive and the bound nonnegative")
        self.maps = list(maps)
        self.dim = dim
        self.horizon = float(horizon)
        self.domain = domain
        self.seed_set = seed_set
        self.bound = float(bound)
        self.names = list(names) if names is not None else [f"v{i}" for i in range(len(maps))]
        if lipschitz is None:
            lipschitz = [None] * len(maps)
        consts = []
        for i, (fn, L) in enumerate(zip(self.maps, lipschitz)):
            if L is None:
                L = estimate_lipschitz(fn, dim, self.horizon, domain, seed=lipschitz_seed + i)
            elif np.isscalar(L):
                L = (float(L), float(L))
            consts.append((float(L[0]), float(L[1])))
        self.lipschitz_pairs = consts

    @property
    def m(self) -> int:
        return len(self.maps)

    @property
    def lipschitz(self) -> list[float]:
        return [max(a, b) for a, b in self.lipschitz_pairs]

    @property
    def max_lipschitz_t(self) -> float:
        return max(a for a, _ in self.lipschitz_pairs)

    @property
    def max_lipschitz_x(self) -> float:
        return max(b for _, b in self.lipschitz_pairs)

    def tube_box(self) -> Box:
        """Bounding box of the closed MT-neighbourhood of D."""
        return self.seed_set.bounding_box().inflate(self.bound * self.horizon)

    def in_tube(self, x, tol: float = 1e-9) -> np.ndarray:
        return self.seed_set.distance(x) <= self.bound * self.horizon + tol

    def _check_point(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise DomainError(f"state has dimension {x.size}, expected {self.dim}")
        if not (-1e-12 <= t <= self.horizon + 1e-12) or not self.domain.contains(x)[0]:
            raise DomainError(f"({t}, {x.tolist()}) lies outside [0, T] x Omega")
        return x

    def vertex_values(self, t, x) -> np.ndarray:
        """Vertex values, shape (P, m, n) for vectorized input."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.asarray(x, dtype=float).reshape(t.size, self.dim)
        return np.stack([fn(t, x) for fn in self.maps], axis=1)

    def raw_value(self, t: float, x) -> np.ndarray:
        x = self._check_point(t, x)
        return self.vertex_values(t, x)[0]

    def canonical_indices(self, t: float, x) -> list[int]:
        """Map indices whose values are the extreme points of F(t, x)."""
        return extreme_indices(self.raw_value(t, x))

    def value(self, t: float, x) -> Polytope:
        V = self.raw_value(t, x)
        return Polytope(V[extreme_indices(V)], canonical=True)

    def check_hypotheses(self, samples: int = 10_000, seed: int = 0) -> dict:
        """Sampled verification of |v_i| <= M, the Lipschitz constants and B(D, MT) inside Omega."""
        rng = np.random.default_rng(seed)
        t = rng.random(samples) * self.horizon
        x = self.domain.lo + rng.random((samples, self.dim)) * (self.domain.hi - self.domain.lo)
        V = self.vertex_values(t, x)
        norm_max = float(np.max(np.linalg.norm(V, axis=2)))
        bound_ok = norm_max <= self.bound + 1e-9

        lip_ratio = 0.0
        k = samples // 2
        t2 = np.clip(t[:k] + rng.normal(scale=0.05 * self.horizon, size=k), 0, self.horizon)
        x2 = np.clip(x[:k] + rng.normal(scale=0.05, size=(k, self.dim)), self.domain.lo, self.domain.hi)
        V2 = self.vertex_values(t2, x2)
        for i, (lt, lx) in enumerate(self.lipschitz_pairs):
            diff = np.linalg.norm(V2[:, i] - V[:k, i], axis=1)
            allowed = lt * np.abs(t2 - t[:k]) + lx * np.linalg.norm(x2 - x[:k], axis=1)
            excess = diff - allowed * (1 + 1e-6)
            bad = excess > 1e-12
            if np.any(bad):
                lip_ratio = max(lip_ratio, float(np.max(diff[bad] / np.maximum(allowed[bad], 1e-300))))
        tube = self.tube_box()
        tube_ok = bool(np.all(tube.lo >= self.domain.lo - 1e-12) and np.all(tube.hi <= self.domain.hi + 1e-12))
        return {
            "bound_ok": bool(bound_ok), "sampled_max_norm": norm_max, "bound": self.bound,
            "lipschitz_ok": lip_ratio == 0.0, "lipschitz_violation_ratio": lip_ratio,
            "tube_in_domain": tube_ok,
        }


class VertexCombination(LipschitzMap):
    """psi(t, x) = sum_j w_j v_{i_j}(t, x): fixed weights on moving vertices."""

    def __init__(self, F: VertexMultiMap, indices: Sequence[int], weights):
        self.F = F
        self.indices = tuple(int(i) for i in indices)
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        if len(self.indices) != self.weights.size or not self.indices:
            raise ValueError("indices and weights must match and be non-empty")
        if np.any(self.weights < -1e-12) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must lie on the simplex")
        self.dim = F.dim
        self.lipschitz_t = float(sum(w * F.lipschitz_pairs[i][0] for i, w in zip(self.indices, self.weights)))
        self.lipschitz_x = float(sum(w * F.lipschitz_pairs[i][1] for i, w in zip(self.indices, self.weights)))

    def __call__(self, t, x):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.asarray(x, dtype=float).reshape(t.size, self.dim)
        out = np.zeros((t.size, self.dim))
        for i, w in zip(self.indices, self.weights):
            if w != 0.0:
                out += w * self.F.maps[i](t, x)
        return out

    def vertex_index(self):
        nz = [i for i, w in zip(self.indices, self.weights) if w != 0.0]
        if len(nz) == 1:
            return nz[0]
        return None

    def to_json(self):
        return {"indices": list(self.indices), "weights": self.weights.tolist()}

    def __repr__(self):
        return f"VertexCombination({list(self.indices)}, {self.weights.tolist()})"


def lsp_selection(F: VertexMultiMap, t: float, x, y, eps: float) -> VertexCombination:
    """Lipschitz selection of co F through y at (t, x): Caratheodory weights frozen on moving vertices."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    V = F.raw_value(t, x)
    keep = extreme_indices(V)
    P = Polytope(V[keep], canonical=True)
    dec = caratheodory(P, y)
    return VertexCombination(F, [keep[i] for i in dec.indices], dec.weights)


@dataclass(frozen=True)
class LipschitzPath:
    """Piecewise-linear u : [0, T] -> R^n, an element of the path space Y."""

    times: np.ndarray
    states: np.ndarray
    lipschitz: float = field(default=0.0)

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.interp(t, self.times, self.states[:, i]) for i in range(self.states.shape[1])], axis=1)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def check(self, F: VertexMultiMap, tol: float = 1e-9) -> bool:
        steps = np.linalg.norm(np.diff(self.states, axis=0), axis=1)
        ok_speed = np.all(steps <= F.bound * np.diff(self.times) + tol)
        return bool(ok_speed and np.all(F.in_tube(self.states, tol)))


def random_path(F: VertexMultiMap, seed: int, segments: int = 64) -> LipschitzPath:
    """Seeded piecewise-linear path with slopes in the closed M-ball, kept inside B(D, MT)."""
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, F.horizon, segments + 1)
    h = times[1] - times[0]
    n = F.dim
    x = F.seed_set.sample(rng)
    states = [x]
    for _ in range(segments):
        d = rng.normal(size=n)
        norm = np.linalg.norm(d)
        d = d / norm if norm > 0 else np.zeros(n)
        v = F.bound * rng.random() ** (1.0 / n) * d
        step = h * v
        for _ in range(30):
            if F.in_tube(x + step, tol=0.0)[0]:
                break
            step = 0.5 * step
        else:
            step = np.zeros(n)
        x = x + step
        states.append(x)
    return LipschitzPath(times, np.array(states), F.bound)
