import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.spatial import ConvexHull

from extremal_flow.geometry import (DimensionError, NotAMemberError, Polytope, canonicalize, caratheodory, chebyshev,
                                    contains, distance, extreme_indices, hausdorff)

SEGMENT = Polytope([[-1.0], [1.0]])
TRIANGLE = Polytope([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
SQUARE = Polytope([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_contains_examples():
    assert contains(SEGMENT, [0.0])
    assert not contains(SEGMENT, [2.0], tol=1e-9)
    assert not contains(TRIANGLE, [0.6, 0.6])
    assert contains(TRIANGLE, [0.5, 0.5])


def test_contains_matches_facet_oracle():
    rng = np.random.default_rng(1)
    for y in rng.uniform(-0.3, 1.3, size=(300, 2)):
        inside = y[0] >= 0 and y[1] >= 0 and y[0] + y[1] <= 1
        margin = min(y[0], y[1], 1 - y[0] - y[1])
        if abs(margin) > 1e-6:
            assert contains(TRIANGLE, y) == inside


def test_caratheodory_examples():
    dec = caratheodory(SQUARE, SQUARE.vertices[2])
    assert dec.indices == (2,) and dec.weights.tolist() == [1.0]
    dec = caratheodory(SEGMENT, [0.0])
    np.testing.assert_allclose(dec.weights, [0.5, 0.5])
    dec = caratheodory(SQUARE, [0.5, 0.5])
    assert len(dec.indices) <= 3
    assert np.linalg.norm(dec.recombine(SQUARE) - [0.5, 0.5]) <= 1e-9


def test_caratheodory_rejects_outside():
    with pytest.raises(NotAMemberError):
        caratheodory(TRIANGLE, [2.0, 2.0])


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        hausdorff(SEGMENT, TRIANGLE)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 9))
def test_caratheodory_invariants(seed, n, m):
    rng = np.random.default_rng(seed)
    P = Polytope(rng.normal(size=(m, n)))
    y = rng.dirichlet(np.ones(m)) @ P.vertices
    dec = caratheodory(P, y)
    assert len(dec.indices) <= n + 1
    assert abs(dec.weights.sum() - 1.0) <= 1e-12
    assert np.all(dec.weights >= 0)
    assert np.linalg.norm(dec.recombine(P) - y) <= 1e-9


def test_chebyshev_examples():
    c, r = chebyshev(Polytope([[0.3, -2.0]]))
    np.testing.assert_allclose(c, [0.3, -2.0])
    assert r == 0.0
    c, r = chebyshev(SEGMENT)
    assert c[0] == pytest.approx(0.0, abs=1e-12) and r == pytest.approx(1.0)
    c, r = chebyshev(SQUARE)
    np.testing.assert_allclose(c, [0.5, 0.5], atol=1e-12)
    assert r == pytest.approx(math.sqrt(2) / 2)


def test_chebyshev_square_grid_oracle():
    # minimax over vertices on a 1e-3 grid
    g = np.arange(0.0, 1.0 + 5e-4, 1e-3)
    X, Y = np.meshgrid(g, g)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    worst = np.max(np.linalg.norm(pts[:, None, :] - SQUARE.vertices[None], axis=2), axis=1)
    k = int(np.argmin(worst))
    c, r = chebyshev(SQUARE)
    assert np.linalg.norm(c - pts[k]) <= 1e-3
    assert abs(r - worst[k]) <= 1e-6


@pytest.mark.parametrize("seed", range(15))
def test_chebyshev_against_minimax(seed):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 3
    V = rng.normal(size=(int(rng.integers(1, 9)), n))
    c, r = chebyshev(Polytope(V))
    assert np.max(np.linalg.norm(V - c, axis=1)) <= r + 1e-12
    best = min(
        (minimize(lambda z: np.max(np.linalg.norm(V - z, axis=1)), V[i], method="Nelder-Mead",
                  options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000}).fun for i in range(len(V))),
    )
    assert r <= best + 1e-7


@pytest.mark.parametrize("seed", range(10))
def test_extreme_indices_against_qhull(seed):
    rng = np.random.default_rng(seed)
    n = 2 + seed % 2
    V = rng.normal(size=(12, n))
    assert sorted(extreme_indices(V)) == sorted(ConvexHull(V).vertices.tolist())


def test_canonicalize_drops_interior_and_duplicates():
    P = Polytope([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.2, 0.2], [1.0, 0.0]])
    Q = canonicalize(P)
    assert len(Q) == 3 and Q.canonical


def test_hausdorff_examples():
    assert hausdorff(SQUARE, SQUARE) == 0.0
    assert hausdorff(Polytope([[0.0], [1.0]]), Polytope([[0.0], [2.0]])) == pytest.approx(1.0)
    shifted = Polytope(SQUARE.vertices + [1.0, 0.0])
    assert hausdorff(SQUARE, shifted) == pytest.approx(1.0, abs=1e-12)


def _distance_oracle(V, y):
    # minimize over barycentric weights
    m = len(V)
    res = minimize(lambda w: np.sum((w @ V - y) ** 2), np.full(m, 1.0 / m), method="SLSQP",
                   bounds=[(0, 1)] * m, constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1}],
                   options={"ftol": 1e-14, "maxiter": 500})
    return math.sqrt(max(res.fun, 0.0))


@pytest.mark.parametrize("seed", range(10))
def test_distance_against_qp(seed):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(6, 2))
    y = rng.normal(size=2) * 3
    assert distance(Polytope(V), y) == pytest.approx(_distance_oracle(V, y), abs=1e-6)


def test_hausdorff_vertex_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(5):
        P, Q = Polytope(rng.normal(size=(5, 2))), Polytope(rng.normal(size=(4, 2)) + 0.5)
        d1 = max(_distance_oracle(Q.vertices, v) for v in P.vertices)
        d2 = max(_distance_oracle(P.vertices, w) for w in Q.vertices)
        assert hausdorff(P, Q) == pytest.approx(max(d1, d2), abs=1e-6)


def test_polytope_validation():
    with pytest.raises(ValueError):
        Polytope(np.empty((0, 2)))
    with pytest.raises(ValueError):
        Polytope([[np.inf, 0.0]])
    P = Polytope([[1.0, 2.0]])
    np.testing.assert_array_equal(Polytope.from_json(P.to_json()).vertices, P.vertices)
    assert list(itertools.chain(*P.to_json())) == [1.0, 2.0]
