"""Piecewise-Lipschitz near-extremal selections built over covers by forward cones.

Given a Lipschitz selection phi of co F with h(phi, F) < eta on a box S, the
refinement replaces phi by a selection g that, inside each cone cell, cycles
through vertex-valued pieces on time sub-strips whose lengths are the
Caratheodory weights of phi at the cell anchor. Each piece carries an affine
majorant of h certifying that its values are eps-close to extreme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Polytope, caratheodory, extreme_indices, NotAMemberError
from .multimap import ActivePiece, Box, LipschitzMap, VertexCombination, VertexMultiMap, lsp_selection
from .variance import AffineMajorant, affine_majorant, h_value

MAX_CELLS = 200_000


class CoverError(RuntimeError):
    pass


class NotCoveredError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceTimeBox:
    t_lo: float
    t_hi: float
    box: Box

    @property
    def dim(self):
        return self.box.dim

    def contains(self, t, x, tol=1e-12):
        t = np.atleast_1d(t)
        return (t >= self.t_lo - tol) & (t <= self.t_hi + tol) & self.box.contains(x, tol)

    def sample(self, rng, k):
        t = self.t_lo + rng.random(k) * (self.t_hi - self.t_lo)
        x = self.box.lo + rng.random((k, self.dim)) * (self.box.hi - self.box.lo)
        return t, x

    def to_json(self):
        return {"t": [self.t_lo, self.t_hi], **self.box.to_json()}


@dataclass(frozen=True)
class ConeCell:
    """Forward cone {apex_time <= s < t_end, |y - apex| <= slope (s - apex_time)}.

    The top face is closed only for cells ending at the top of the covered box.
    `t_start` is the slab start, where the cone radius equals the node covering radius.
    """

    index: int
    apex_time: float
    apex: np.ndarray
    t_start: float
    t_end: float
    slope: float
    slab: int
    node: int
    closed_top: bool

    @property
    def extent(self) -> float:
        return self.t_end - self.apex_time

    @property
    def anchor(self) -> tuple[float, np.ndarray]:
        return self.t_start, self.apex

    def contains(self, s, y) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        y = np.asarray(y, dtype=float).reshape(s.size, -1)
        top = (s <= self.t_end) if self.closed_top else (s < self.t_end)
        inside = np.linalg.norm(y - self.apex, axis=1) <= self.slope * (s - self.apex_time) * (1 + 1e-12) + 1e-12
        return (s >= self.apex_time) & top & inside

    def to_json(self):
        return {"index": self.index, "apex_time": self.apex_time, "apex": self.apex.tolist(),
                "t_start": self.t_start, "t_end": self.t_end, "slope": self.slope,
                "closed_top": self.closed_top}


class ConeCover:
    """Time slabs times a spatial node grid; cell i = Gamma_i minus all earlier cones.

    Cones of slab k start r/slope before the slab so that at the slab start each
    covers its node's grid cube (r = half-diagonal of a cube). Cells are ordered
    by apex time, then lexicographically by apex.
    """

    def __init__(self, S: SpaceTimeBox, slope: float, slab_edges: np.ndarray, nodes: np.ndarray, radius: float):
        self.S = S
        self.slope = float(slope)
        self.slab_edges = np.asarray(slab_edges, dtype=float)
        self.nodes = np.asarray(nodes, dtype=float)
        self.radius = float(radius)
        self.lead = self.radius / self.slope
        K = len(self.slab_edges) - 1
        cells = []
        for k in range(K):
            for j, node in enumerate(self.nodes):
                cells.append(ConeCell(
                    index=len(cells), apex_time=float(self.slab_edges[k] - self.lead), apex=node,
                    t_start=float(self.slab_edges[k]), t_end=float(self.slab_edges[k + 1]),
                    slope=self.slope, slab=k, node=j, closed_top=(k == K - 1)))
        self.cells = cells

    @property
    def n_slabs(self):
        return len(self.slab_edges) - 1

    @property
    def n_nodes(self):
        return len(self.nodes)

    def __len__(self):
        return len(self.cells)

    @property
    def slab_length(self) -> float:
        return float(np.max(np.diff(self.slab_edges)))

    @property
    def space_offset(self) -> float:
        """Largest distance from a cell's node to a point of the cell."""
        return self.radius + self.slope * self.slab_length

    def slab_of(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.searchsorted(self.slab_edges, t, side="right") - 1
        k = np.where(t == self.slab_edges[-1], self.n_slabs - 1, k)
        return k

    def locate(self, t, x) -> np.ndarray:
        """Cell index of each point, -1 where uncovered."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.asarray(x, dtype=float).reshape(t.size, -1)
        k = self.slab_of(t)
        valid = (k >= 0) & (k < self.n_slabs) & (t >= self.S.t_lo) & (t <= self.S.t_hi)
        out = np.full(t.size, -1, dtype=np.int64)
        if not np.any(valid):
            return out
        idx = np.flatnonzero(valid)
        kk = k[idx]
        allowed = self.slope * (t[idx] - (self.slab_edges[kk] - self.lead))
        chunk = max(1, 2_000_000 // max(1, self.n_nodes))
        for s in range(0, idx.size, chunk):
            sel = slice(s, s + chunk)
            d = np.linalg.norm(x[idx[sel], None, :] - self.nodes[None, :, :], axis=2)
            hit = d <= allowed[sel, None] * (1 + 1e-12) + 1e-12
            first = np.argmax(hit, axis=1)
            found = hit[np.arange(first.size), first]
            out[idx[sel]] = np.where(found, kk[sel] * self.n_nodes + first, -1)
        return out

    def entry_margin(self, cell: int, t: float, x) -> float:
        """min over earlier cones of the same slab of |x - node| - slope (t - apex_time).

        Nonpositive once the point has entered an earlier cone.
        """
        j = self.cells[cell].node
        if j == 0:
            return math.inf
        apex_time = self.cells[cell].apex_time
        d = np.linalg.norm(self.nodes[:j] - np.asarray(x, dtype=float).reshape(1, -1), axis=1)
        return float(np.min(d - self.slope * (t - apex_time) * (1 + 1e-12) - 1e-12))

    def cell_box(self, cell: int) -> SpaceTimeBox:
        """Bounding box of a cell intersected with S."""
        c = self.cells[cell]
        r = self.space_offset
        lo = np.maximum(c.apex - r, self.S.box.lo)
        hi = np.minimum(c.apex + r, self.S.box.hi)
        return SpaceTimeBox(c.t_start, c.t_end, Box(lo, hi))


def _axis_counts(extent: np.ndarray, spacing: float) -> np.ndarray:
    if not math.isfinite(spacing):
        return np.ones(extent.size, dtype=int)
    return np.maximum(1, np.ceil(extent / spacing - 1e-12).astype(int))


def build_cone_cover(S: SpaceTimeBox, F: VertexMultiMap, modulus: float, spacing: float | None = None,
                     budget: float | None = None, lipschitz: tuple[float, float] | None = None,
                     max_cells: int = MAX_CELLS) -> ConeCover:
    """Cover S by (M+1)-cones with time slabs of length <= modulus and node spacing <= spacing.

    With `budget` and `lipschitz = (L_t, L_x)` the cover must also keep
    L_t * (slab length) + L_x * (space offset) <= budget in every cell;
    otherwise CoverError asks for a finer modulus.
    """
    if not modulus > 0:
        raise ValueError("modulus must be positive")
    spacing = modulus if spacing is None else spacing
    slope = F.bound + 1.0
    duration = S.t_hi - S.t_lo
    n_slabs = 1 if not math.isfinite(modulus) or duration <= 0 else max(1, math.ceil(duration / modulus - 1e-12))
    edges = S.t_lo + (S.t_hi - S.t_lo) * np.arange(n_slabs + 1) / n_slabs
    edges[-1] = S.t_hi
    extent = S.box.hi - S.box.lo
    counts = _axis_counts(extent, spacing)
    total = int(n_slabs * np.prod(counts))
    if total > max_cells:
        raise CoverError(f"cover needs {total} cells (limit {max_cells}); the schedule is too fine for this scenario")
    axes = [S.box.lo[d] + extent[d] * (np.arange(c) + 0.5) / c for d, c in enumerate(counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.reshape(-1) for m in mesh], axis=1)
    half = extent / (2 * counts)
    radius = float(np.linalg.norm(half)) * (1 + 1e-12) + 1e-12
    cover = ConeCover(S, slope, edges, nodes, radius)
    if budget is not None and lipschitz is not None:
        osc = lipschitz[0] * cover.slab_length + lipschitz[1] * cover.space_offset
        if osc > budget * (1 + 1e-12):
            raise CoverError(f"modulus {modulus:g} too coarse: cell oscillation {osc:.3e} exceeds {budget:.3e}; refine it")
    return cover


def strip_count(M: float, nu: int, T: float, eps: float) -> int:
    """Smallest integer N with N > 8 M nu^2 T / eps."""
    return int(math.floor(8.0 * M * nu * nu * T / eps)) + 1


@dataclass
class CellData:
    theta: np.ndarray                    # n+1 weights, zero slots padded
    values: np.ndarray                   # y_j, shape (n+1, n)
    pieces: list                         # psi_j or None
    majorants: list                      # AffineMajorant or None
    map_indices: list                    # vertex-map index per slot or -1
    anchor_h: float = 0.0
    cum: np.ndarray = field(init=False)
    positive: np.ndarray = field(init=False)

    def __post_init__(self):
        cum = np.cumsum(self.theta)
        cum[-1] = 1.0
        self.cum = cum
        self.positive = np.flatnonzero(self.theta > 0)


class PiecewiseSelection:
    """g = psi^i_j on (cell i) x (sub-strips j), with sub-strip lengths theta^i_j T / N."""

    def __init__(self, F: VertexMultiMap, S: SpaceTimeBox, cover: ConeCover, cells: list[CellData],
                 N: int, eps: float, eta: float, exact: bool = False):
        self.F = F
        self.S = S
        self.cover = cover
        self.cells = cells
        self.N = int(N)
        self.eps = float(eps)
        self.eta = float(eta)
        self.exact = exact
        self.T = F.horizon
        self.violations: list[dict] = []
        self._cums = np.array([c.cum for c in cells])
        self._thetas = np.array([c.theta for c in cells])
        self._last = np.array([c.positive[-1] for c in cells])

    @property
    def nu(self) -> int:
        return len(self.cover)

    @property
    def slots(self) -> int:
        return self.F.dim + 1

    # strip arithmetic; every boundary is computed as (m + c) * T / N

    def strip_index(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        m = np.floor(t * self.N / self.T).astype(np.int64)
        m = np.where(m * self.T / self.N > t, m - 1, m)
        m = np.where((m + 1) * self.T / self.N <= t, m + 1, m)
        return np.clip(m, 0, self.N - 1)

    def sub_strip(self, cell, t) -> np.ndarray:
        cell = np.atleast_1d(cell)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        m = self.strip_index(t)
        bt = (m[:, None] + self._cums[cell][:, :-1]) * self.T / self.N
        # t = T closes the last strip
        return np.minimum(np.sum(bt <= t[:, None], axis=1), self._last[cell])

    def sub_strip_lengths(self, cell: int, m: int) -> np.ndarray:
        c = np.concatenate([[0.0], self.cells[cell].cum])
        bounds = (m + c) * self.T / self.N
        return np.diff(bounds)

    def locate(self, t, x):
        """(cell, slot) per point; cell -1 where uncovered."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        cells = self.cover.locate(t, x)
        slots = np.zeros_like(cells)
        ok = cells >= 0
        if np.any(ok):
            slots[ok] = self.sub_strip(cells[ok], t[ok])
        return cells, slots

    def piece_keys(self, t, x) -> np.ndarray:
        cells, slots = self.locate(t, x)
        return np.stack([cells, slots], axis=1)

    def piece(self, cell: int, slot: int) -> LipschitzMap:
        return self.cells[cell].pieces[slot]

    def evaluate_many(self, t, x) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.asarray(x, dtype=float).reshape(t.size, self.F.dim)
        cells, slots = self.locate(t, x)
        if np.any(cells < 0):
            i = int(np.flatnonzero(cells < 0)[0])
            raise NotCoveredError(f"({t[i]}, {x[i].tolist()}) is not covered by this selection")
        out = np.empty((t.size, self.F.dim))
        keys = cells * self.slots + slots
        for key in np.unique(keys):
            sel = keys == key
            out[sel] = self.piece(int(key // self.slots), int(key % self.slots))(t[sel], x[sel])
        return out

    def evaluate(self, t: float, x) -> np.ndarray:
        return self.evaluate_many(np.array([float(t)]), np.asarray(x, dtype=float).reshape(1, -1))[0]

    __call__ = evaluate_many

    def next_break(self, cell: int, t: float) -> float:
        """First time after t at which the sub-strip piece of `cell` changes, capped at the slab end."""
        c = self.cells[cell]
        end = self.cover.cells[cell].t_end
        if c.positive.size <= 1:
            return end
        m = int(self.strip_index(t)[0])
        for mm in (m, m + 1):
            bt = (mm + c.cum[c.positive]) * self.T / self.N
            later = bt[bt > t]
            if later.size:
                return float(min(later[0], end))
        return end

    def active(self, t: float, x) -> ActivePiece:
        cells, slots = self.locate(np.array([float(t)]), np.asarray(x, dtype=float).reshape(1, -1))
        cell, slot = int(cells[0]), int(slots[0])
        if cell < 0:
            raise NotCoveredError(f"({t}, {np.ravel(x).tolist()}) is not covered by this selection")
        cover = self.cover

        def margin(s, y, cell=cell):
            return cover.entry_margin(cell, s, y)

        return ActivePiece((cell, slot), self.piece(cell, slot), self.next_break(cell, t),
                           margin if cover.cells[cell].node > 0 else None)

    def time_breaks(self, t0: float, t1: float) -> np.ndarray:
        """Every time in (t0, t1) where some cell's piece may switch by time alone."""
        out = [self.cover.slab_edges]
        for k in range(self.cover.n_slabs):
            a, b = self.cover.slab_edges[k], self.cover.slab_edges[k + 1]
            lo, hi = max(a, t0), min(b, t1)
            if hi <= lo:
                continue
            ms = None
            seen = set()
            for j in range(self.cover.n_nodes):
                c = self.cells[k * self.cover.n_nodes + j]
                if c.positive.size <= 1:
                    continue
                key = tuple(c.cum[c.positive])
                if key in seen:
                    continue
                seen.add(key)
                if ms is None:
                    ms = np.arange(int(self.strip_index(lo)[0]), int(self.strip_index(hi)[0]) + 1)
                out.append(((ms[:, None] + c.cum[c.positive][None, :]) * self.T / self.N).ravel())
        allb = np.unique(np.concatenate(out))
        return allb[(allb > t0) & (allb < t1)]

    def path_lipschitz(self, speed: float) -> float:
        return self.F.max_lipschitz_t + self.F.max_lipschitz_x * speed

    def max_slope(self) -> float:
        slopes = [m.slope for c in self.cells for m in c.majorants if m is not None]
        return max(slopes, default=0.0)

    def certificate(self, cell: int, slot: int) -> AffineMajorant | None:
        return self.cells[cell].majorants[slot]

    def verify_certificates(self, samples_per_cell: int = 2, seed: int = 0, max_total: int = 400,
                            interior: int = 2) -> list[dict]:
        """Sampled check of phi_j(psi_j) <= eps and phi_j >= h(., F) on points of F near the anchor."""
        rng = np.random.default_rng(seed)
        if self.exact:
            return self._verify_exact(rng, max_total)
        order = rng.permutation(self.nu)[:max(1, max_total // max(1, samples_per_cell))]
        found = []
        for i in order:
            cell = self.cover.cells[i]
            box = self.cover.cell_box(i)
            for _ in range(samples_per_cell):
                for _try in range(20):
                    t, x = box.sample(rng, 1)
                    if self.cover.locate(t, x)[0] == i:
                        break
                else:
                    t, x = np.array([cell.t_start]), cell.apex[None, :]
                V = self.F.vertex_values(t, x)[0]
                P = Polytope(V[extreme_indices(V)], canonical=True)
                zs = list(P.vertices) + [rng.dirichlet(np.ones(len(P))) @ P.vertices for _ in range(interior)]
                for j in self.cells[i].positive:
                    phi = self.cells[i].majorants[j]
                    psi = self.cells[i].pieces[j]
                    val = float(phi(psi(t, x)[0]))
                    if val > self.eps + 1e-9:
                        found.append({"cell": int(i), "slot": int(j), "t": float(t[0]), "x": x[0].tolist(),
                                      "kind": "value", "excess": val - self.eps})
                    for z in zs:
                        gap = h_value(z, P) - float(phi(z))
                        if gap > 1e-6:
                            found.append({"cell": int(i), "slot": int(j), "t": float(t[0]), "x": x[0].tolist(),
                                          "kind": "dominance", "excess": gap})
        return found

    def _verify_exact(self, rng, count):
        found = []
        t, x = self.S.sample(rng, min(count, 64))
        vals = self.evaluate_many(t, x)
        for k in range(t.size):
            V = self.F.vertex_values(t[k:k + 1], x[k:k + 1])[0]
            P = Polytope(V[extreme_indices(V)], canonical=True)
            hv = h_value(vals[k], P)
            if hv > 1e-7:
                found.append({"t": float(t[k]), "x": x[k].tolist(), "kind": "exact", "excess": hv})
        return found

    def to_json(self) -> dict:
        return {
            "S": self.S.to_json(), "N": self.N, "eps": self.eps, "eta": self.eta, "exact": self.exact,
            "slope": self.cover.slope, "slab_edges": self.cover.slab_edges.tolist(),
            "nodes": self.cover.nodes.tolist(), "radius": self.cover.radius,
            "cells": [
                {"cone": cc.to_json(), "theta": c.theta.tolist(), "vertex_maps": c.map_indices,
                 "values": c.values.tolist(),
                 "majorants": [m.to_json() if m is not None else None for m in c.majorants]}
                for cc, c in zip(self.cover.cells, self.cells)
            ],
        }


def _is_extreme_throughout(F: VertexMultiMap, index: int, S: SpaceTimeBox, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    corners = np.array(np.meshgrid(*[[lo, hi] for lo, hi in zip(S.box.lo, S.box.hi)], indexing="ij"))
    corners = corners.reshape(S.dim, -1).T
    ts = np.concatenate([np.repeat([S.t_lo, 0.5 * (S.t_lo + S.t_hi), S.t_hi], len(corners)),
                         S.sample(rng, 8)[0]])
    xs = np.concatenate([np.tile(corners, (3, 1)), S.sample(rng, 8)[1]])
    for t, x in zip(ts, xs):
        V = F.vertex_values(t, x)[0]
        keep = extreme_indices(V)
        if index in keep:
            continue
        if not any(np.all(np.abs(V[k] - V[index]) <= 1e-12) for k in keep):
            return False
    return True


def _exact_selection(S: SpaceTimeBox, F: VertexMultiMap, phi: VertexCombination, eps: float, eta: float):
    cover = build_cone_cover(S, F, math.inf, math.inf)
    n = F.dim
    index = phi.vertex_index()
    theta = np.zeros(n + 1)
    theta[0] = 1.0
    t0, x0 = cover.cells[0].anchor
    values = np.zeros((n + 1, n))
    values[0] = F.vertex_values(t0, x0)[0][index]
    pieces = [VertexCombination(F, [index], [1.0])] + [None] * n
    cell = CellData(theta, values, pieces, [None] * (n + 1), [index] + [-1] * n)
    return PiecewiseSelection(F, S, cover, [cell], strip_count(F.bound, 1, F.horizon, eps), eps, eta, exact=True)


def refine(S: SpaceTimeBox, F: VertexMultiMap, phi: LipschitzMap, eta: float, eps: float,
           max_cells: int = MAX_CELLS, max_halvings: int = 30, verify: bool = True) -> PiecewiseSelection:
    """Replace the Lipschitz selection phi on S by a near-extremal piecewise selection.

    When phi already is a single vertex map that stays extreme on S, it is
    returned as a one-cell selection flagged `exact` (its h-values are zero and
    no affine certificate is needed).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    T, M, n = F.horizon, F.bound, F.dim
    if phi.vertex_index() is not None and _is_extreme_throughout(F, phi.vertex_index(), S):
        return _exact_selection(S, F, phi, eps, eta)

    Lft, Lfx = F.max_lipschitz_t, F.max_lipschitz_x
    At = max(Lft, phi.lipschitz_t)
    Ax = max(Lfx, phi.lipschitz_x)
    slope = M + 1.0
    # |psi - y_j| and |phi - phi(anchor)| below eps/(4T), with margin 2
    budget = eps / (8.0 * T)
    if Ax == 0.0:
        delta = budget / At if At > 0 else math.inf
        spacing = math.inf
    else:
        delta = 0.5 * budget / (At + Ax * slope)
        spacing = budget / (Ax * math.sqrt(n))

    for _ in range(max_halvings + 1):
        cover = build_cone_cover(S, F, delta, spacing, budget=budget, lipschitz=(At, Ax), max_cells=max_cells)
        dt, dx = cover.slab_length, cover.space_offset
        move_F = Lft * dt + Lfx * dx
        cells, ok = [], True
        for cell in cover.cells:
            t_a, x_a = cell.anchor
            V = F.vertex_values(t_a, x_a)[0]
            keep = extreme_indices(V)
            P = Polytope(V[keep], canonical=True)
            y = phi.evaluate(t_a, x_a)
            try:
                dec = caratheodory(P, y)
            except NotAMemberError as exc:
                raise NotAMemberError(y, exc.distance) from ValueError(
                    f"phi left co F at anchor ({t_a}, {x_a.tolist()})")
            anchor_h = h_value(y, P)
            if math.isfinite(eta) and anchor_h >= eta:
                raise ValueError(f"h(phi, F) = {anchor_h:.6g} >= eta = {eta:.6g} at ({t_a}, {x_a.tolist()})")
            theta = np.zeros(n + 1)
            values = np.zeros((n + 1, n))
            pieces = [None] * (n + 1)
            majorants = [None] * (n + 1)
            ids = [-1] * (n + 1)
            for j, (ci, w) in enumerate(zip(dec.indices, dec.weights)):
                yj = P.vertices[ci]
                theta[j] = w
                values[j] = yj
                ids[j] = keep[ci]
                pieces[j] = lsp_selection(F, t_a, x_a, yj, eps)
                base = affine_majorant(yj, P, eps)
                kappa = move_F * (1.0 + base.slope)
                psi_move = pieces[j].lipschitz_t * dt + pieces[j].lipschitz_x * dx
                if float(base(yj)) + base.slope * psi_move + kappa > eps:
                    ok = False
                    break
                majorants[j] = base.shifted(kappa)
            if not ok:
                break
            cells.append(CellData(theta, values, pieces, majorants, ids, anchor_h=anchor_h))
        if ok:
            break
        delta *= 0.5
        spacing *= 0.5
        if not math.isfinite(delta):
            raise CoverError("certificates fail on an unbounded cell although F does not move")
    else:
        raise CoverError("could not meet the certificate bound; the modulus needs more halvings")

    g = PiecewiseSelection(F, S, cover, cells, strip_count(M, len(cover), T, eps), eps, eta)
    if verify:
        g.violations = g.verify_certificates()
    return g


def segment_path(key_fn, breaks: np.ndarray, u, t0: float, t1: float, resolution: int = 512,
                 tol: float = 1e-12):
    """Split [t0, t1] into maximal intervals on which key_fn(s, u(s)) is constant.

    Returns (edges, keys): edges[0] = t0 < ... < edges[-1] = t1 and one key row
    per interval. Changes are located by bisection to `tol`; several changes
    inside one grid interval are resolved in further rounds, as long as the
    key differs at the interval ends.
    """
    def keys_at(s):
        k = np.atleast_2d(key_fn(s, u(s)))
        return k.T if k.shape[0] != s.size else k

    grid = np.linspace(t0, t1, resolution + 1)
    nodes = np.unique(np.concatenate([grid, breaks[(breaks > t0) & (breaks < t1)]]))
    keys = keys_at(nodes)
    for _round in range(64):
        differ = np.any(keys[1:] != keys[:-1], axis=1)
        change = np.flatnonzero(differ & (np.diff(nodes) > tol))
        if not change.size:
            break
        lo = nodes[change].copy()
        hi = nodes[change + 1].copy()
        ref = keys[change]
        # most changes sit exactly on a time break
        before = np.nextafter(hi, -np.inf)
        active = ~np.all(keys_at(before) == ref, axis=1)
        lo[~active] = before[~active]
        for _ in range(200):
            active &= (hi - lo) > tol
            if not np.any(active):
                break
            a = np.flatnonzero(active)
            mid = 0.5 * (lo[a] + hi[a])
            same = np.all(keys_at(mid) == ref[a], axis=1)
            lo[a[same]] = mid[same]
            hi[a[~same]] = mid[~same]
        new = np.setdiff1d(np.concatenate([lo, hi]), nodes)
        nodes = np.concatenate([nodes, new])
        keys = np.vstack([keys, keys_at(new)])
        order = np.argsort(nodes, kind="stable")
        nodes, keys = nodes[order], keys[order]
    differ = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1))
    cut = np.unique(np.concatenate([[t0], nodes[differ + 1], [t1]]))
    cut = cut[(cut >= t0) & (cut <= t1)]
    mids = 0.5 * (cut[:-1] + cut[1:])
    seg_keys = np.atleast_2d(key_fn(mids, u(mids)))
    return cut, seg_keys


def crossing_count(g: PiecewiseSelection, u, resolution: int = 512) -> int:
    """Number of maximal time intervals on which (t, u(t)) stays in one cone cell."""
    def cell_key(t, x):
        return g.cover.locate(t, x)[:, None]

    edges, keys = segment_path(cell_key, g.cover.slab_edges, u, 0.0, g.T, resolution)
    runs = 1 + int(np.count_nonzero(np.any(keys[1:] != keys[:-1], axis=1)))
    return runs
