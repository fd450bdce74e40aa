import math
from types import SimpleNamespace

import numpy as np
import pytest

from extremal_flow.geometry import Polytope
from extremal_flow.multimap import Box, VertexCombination, random_path
from extremal_flow.selection import (CoverError, NotCoveredError, SpaceTimeBox, build_cone_cover, crossing_count,
                                     refine, segment_path, strip_count)
from extremal_flow.variance import h_value

from conftest import make_F


@pytest.fixture(scope="module")
def unit_F():
    return make_F([["-1"], ["1"]], 1, 1.0, [0, 0])


@pytest.fixture(scope="module")
def segment_g(segment):
    F = segment.F
    S = SpaceTimeBox(0.0, F.horizon, F.tube_box())
    return refine(S, F, segment.f0, 1.0 + 1e-9, 0.1)


@pytest.fixture(scope="module")
def rotating_g(rotating):
    F = rotating.F
    S = SpaceTimeBox(0.0, F.horizon, F.tube_box())
    return refine(S, F, rotating.f0, 1.0 + 1e-9, 0.5)


def test_partition_of_unit_box(unit_F):
    S = SpaceTimeBox(0.0, 1.0, Box([-1.0], [1.0]))
    cover = build_cone_cover(S, unit_F, 0.1, 0.2)
    t, x = S.sample(np.random.default_rng(0), 10_000)
    idx = cover.locate(t, x)
    assert np.all(idx >= 0)
    for i in np.unique(idx):
        sel = idx == i
        assert np.all(cover.cells[i].contains(t[sel], x[sel]))
        for j in range(i):
            assert not np.any(cover.cells[j].contains(t[sel], x[sel]))


def test_partition_in_two_dimensions(square):
    S = SpaceTimeBox(0.0, 1.0, Box([-1.0, -1.0], [1.0, 1.0]))
    cover = build_cone_cover(S, square.F, 0.25, 0.5)
    t, x = S.sample(np.random.default_rng(1), 5000)
    idx = cover.locate(t, x)
    assert np.all(idx >= 0)
    hits = np.stack([c.contains(t, x) for c in cover.cells], axis=1)
    first = np.argmax(hits, axis=1)
    np.testing.assert_array_equal(first, idx)


def test_finer_modulus_doubles_cells(unit_F):
    S = SpaceTimeBox(0.0, 1.0, Box([-1.0], [1.0]))
    for mod in (0.5, 0.2, 0.05):
        a = len(build_cone_cover(S, unit_F, mod))
        b = len(build_cone_cover(S, unit_F, mod / 2))
        assert b >= 2 * a


def test_cover_guard(unit_F):
    S = SpaceTimeBox(0.0, 1.0, Box([-1.0], [1.0]))
    with pytest.raises(CoverError):
        build_cone_cover(S, unit_F, 1e-4, 1e-4, max_cells=1000)
    with pytest.raises(CoverError):
        build_cone_cover(S, unit_F, 0.5, 0.5, budget=0.01, lipschitz=(1.0, 1.0))


def test_strip_count_formula():
    assert strip_count(1.0, 1, 1.0, 0.1) == 81
    assert strip_count(2.0, 3, 0.5, 0.25) == math.floor(8 * 2 * 9 * 0.5 / 0.25) + 1
    # exactly on an integer the strict inequality adds one
    assert strip_count(1.0, 1, 1.0, 8.0) == 2


def test_refine_segment(segment_g):
    g = segment_g
    assert g.nu == 1 and g.N == 81
    assert not g.exact and not g.violations
    np.testing.assert_allclose(g.cells[0].theta[:2], [0.5, 0.5])


def test_strip_proportions(rotating_g):
    g = rotating_g
    rng = np.random.default_rng(2)
    for i in rng.choice(g.nu, 5, replace=False):
        for m in (0, g.N // 2, g.N - 1):
            lens = g.sub_strip_lengths(int(i), m)
            np.testing.assert_allclose(lens / (g.T / g.N), g.cells[i].theta, atol=1e-9)
            assert lens.sum() == pytest.approx(g.T / g.N, abs=1e-15)


def test_first_sub_strip_value(segment_g, segment):
    g = segment_g
    c = g.cells[0]
    t = np.array([0.0, 3 * g.T / g.N + 1e-9])
    x = np.zeros((2, 1))
    np.testing.assert_allclose(g(t, x), [c.values[0]] * 2)


def test_values_are_extreme(segment_g, rotating_g, rotating):
    assert set(np.round(segment_g(np.linspace(0, 1, 500), np.zeros((500, 1)))[:, 0], 12)) <= {-1.0, 1.0}
    rng = np.random.default_rng(3)
    t, x = rotating_g.S.sample(rng, 200)
    vals = rotating_g(t, x)
    for k in range(0, 200, 20):
        P = Polytope(rotating.F.vertex_values(t[k], x[k])[0], canonical=True)
        assert h_value(vals[k], P) <= 1e-9


def test_evaluation_total_and_deterministic(rotating_g):
    g = rotating_g
    box = g.S.box
    ts = np.linspace(0, g.T, 100)
    a0 = np.linspace(box.lo[0], box.hi[0], 10)
    a1 = np.linspace(box.lo[1], box.hi[1], 10)
    T, X0, X1 = np.meshgrid(ts, a0, a1, indexing="ij")
    t = T.ravel()
    x = np.stack([X0.ravel(), X1.ravel()], axis=1)
    assert t.size == 10_000
    a = g(t, x)
    b = g(t, x)
    assert np.all(np.isfinite(a))
    np.testing.assert_array_equal(a, b)


def test_uncovered_point_raises(segment_g):
    with pytest.raises(NotCoveredError):
        segment_g(np.array([0.5]), np.array([[100.0]]))


@pytest.mark.parametrize("seed", range(5))
def test_directional_limit(rotating_g, seed):
    g = rotating_g
    M = g.F.bound
    rng = np.random.default_rng(seed)
    t, x = g.S.sample(rng, 40)
    t = np.minimum(t, g.T * 0.99)
    x = np.clip(x, g.S.box.lo + 0.1, g.S.box.hi - 0.1)
    base = g(t, x)
    errs = []
    for h in (1e-6, 1e-8, 1e-10, 1e-12):
        d = rng.normal(size=x.shape)
        d *= (M + 1) * h * rng.random((len(t), 1)) / np.linalg.norm(d, axis=1, keepdims=True)
        errs.append(float(np.max(np.linalg.norm(g(t + h, x + d) - base, axis=1))))
    # along the cone the piece stops changing at the finest offsets
    assert errs[-1] <= 1e-9
    assert errs[-1] <= errs[0] + 1e-9


def test_exact_shortcut(square):
    F = square.F
    S = SpaceTimeBox(0.0, F.horizon, F.tube_box())
    g = refine(S, F, VertexCombination(F, [1], [1.0]), 1e-3, 0.01)
    assert g.exact and g.nu == 1
    np.testing.assert_allclose(g(np.array([0.3]), np.zeros((1, 2))), [[-1.0, 1.0]])
    assert g.verify_certificates() == []


def test_eta_is_strict(segment):
    F = segment.F
    S = SpaceTimeBox(0.0, F.horizon, F.tube_box())
    with pytest.raises(ValueError):
        refine(S, F, segment.f0, 1.0, 0.1)


def test_certificates(rotating_g):
    g = rotating_g
    assert g.violations == []
    for i in range(0, g.nu, max(1, g.nu // 10)):
        for j in g.cells[i].positive:
            phi, psi = g.certificate(i, j), g.piece(i, j)
            t, x = g.cover.cells[i].anchor
            assert float(phi(psi.evaluate(t, x))) <= g.eps


def test_crossing_single_cell(segment_g, segment):
    u = random_path(segment.F, 0)
    assert crossing_count(segment_g, u) == 1


@pytest.mark.parametrize("nu", [1, 3, 7])
def test_crossing_pure_time_slabs(nu):
    F = make_F([["0"]], 1, 0.0, [0])
    S = SpaceTimeBox(0.0, 1.0, F.tube_box())
    cover = build_cone_cover(S, F, 1.0 / nu, math.inf)
    assert cover.n_slabs == nu
    u = random_path(F, 1)
    assert crossing_count(SimpleNamespace(cover=cover, T=1.0), u) == nu


@pytest.mark.parametrize("seed", range(10))
def test_crossing_bound(unit_F, seed):
    S = SpaceTimeBox(0.0, 1.0, unit_F.tube_box())
    cover = build_cone_cover(S, unit_F, 0.25, 0.5)
    u = random_path(unit_F, seed)
    count = crossing_count(SimpleNamespace(cover=cover, T=1.0), u)
    nu = len(cover)
    assert 1 <= count <= nu * (nu + 1) // 2


def test_segment_path_finds_breaks():
    def key(t, x):
        return (t >= 1 / 3).astype(int)[:, None] + (t >= math.pi / 10).astype(int)[:, None]

    def u(t):
        return np.zeros((np.atleast_1d(t).size, 1))

    edges, keys = segment_path(key, np.array([1 / 3]), u, 0.0, 1.0, resolution=16)
    assert keys[:, 0].tolist() == [0, 1, 2]
    assert edges[1] == pytest.approx(math.pi / 10, abs=1e-12)
    assert edges[2] == 1 / 3


def test_to_json_roundtrip_fields(segment_g):
    d = segment_g.to_json()
    assert d["N"] == 81 and len(d["cells"]) == 1
    assert d["cells"][0]["theta"][:2] == [0.5, 0.5]
