import math

import numpy as np
import pytest

from extremal_flow.flow import (IterationState, Shifted, Trajectory, build_extremal, h_bound, homotopy, integrate,
                                is_solution, picard_distance, sample_paths, stability_probe, strip_estimates)
from extremal_flow.multimap import ConstantMap, FunctionMap, HypothesisError
from extremal_flow.selection import SpaceTimeBox, refine


@pytest.fixture(scope="module")
def segment_g(segment):
    F = segment.F
    return refine(SpaceTimeBox(0.0, F.horizon, F.tube_box()), F, segment.f0, 1.0 + 1e-9, 0.1)


@pytest.fixture(scope="module")
def segment_state(segment):
    return build_extremal(segment.F, segment.f0, 0.1, 3, paths=10, h_paths=5)


@pytest.fixture(scope="module")
def smooth(request):
    from extremal_flow.scenario import benchmark
    return benchmark("singleton")


def test_constant_field_is_a_line(segment):
    tr = integrate(ConstantMap([0.5]), 0.25, [0.1], segment.F)
    expected = 0.1 + 0.5 * (tr.times - 0.25)
    assert np.max(np.abs(tr.states[:, 0] - expected)) <= 1e-10
    assert tr.times[0] == 0.25 and tr.times[-1] == 1.0


def test_zigzag_bound(segment_g, segment):
    # alternating +-1 on sub-strips of width T/(2N)
    g = segment_g
    for x0 in (-1.0, 0.0, 0.7):
        tr = integrate(g, 0.0, [x0], segment.F)
        assert np.max(np.abs(tr.states[:, 0] - x0)) <= g.T / (2 * g.N) + 1e-12


def test_step_refinement(smooth):
    f = smooth.f0
    a = integrate(f, 0.0, [0.3], smooth.F)
    b = integrate(f, 0.0, [0.3], smooth.F, step=smooth.F.horizon / 512)
    assert abs(a.states[-1, 0] - b.states[-1, 0]) < 1e-8


def test_trajectory_invariants(segment_g, segment):
    F = segment.F
    tr = integrate(segment_g, 0.0, [0.4], F)
    assert np.all(np.diff(tr.times) > 0)
    steps = np.linalg.norm(np.diff(tr.states, axis=0), axis=1)
    assert np.all(steps <= F.bound * np.diff(tr.times) + 1e-9)
    assert np.all(F.in_tube(tr.states))
    rep = tr.check(F)
    assert all(v for k, v in rep.items() if isinstance(v, bool))


def test_leaving_the_tube_is_reported(segment):
    with pytest.raises(HypothesisError):
        integrate(ConstantMap([1.0]), 0.0, [5.0], segment.F)


def test_determinism(segment_g, segment):
    a = integrate(segment_g, 0.0, [0.2], segment.F)
    b = integrate(segment_g, 0.0, [0.2], segment.F)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.states, b.states)


def test_csv_output(tmp_path, segment):
    tr = integrate(ConstantMap([1.0]), 0.0, [0.0], segment.F)
    path = tmp_path / "x.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,dx1"
    last = [float(v) for v in lines[-1].split(",")]
    assert last[0] == 1.0 and abs(last[1] - 1.0) <= 1e-10


def test_picard_identical_and_constant(segment):
    F = segment.F
    paths = sample_paths(F, 5, 0)
    f = segment.f0
    assert picard_distance(f, f, paths, F).distance == 0.0
    rep = picard_distance(f, Shifted(f, [0.25]), paths, F)
    assert rep.distance == pytest.approx(0.25 * F.horizon, abs=1e-12)


def test_strip_estimates_constant_case(segment, segment_g):
    F = segment.F
    rows = strip_estimates(segment.f0, segment_g, sample_paths(F, 20, 1), F, 1.0 + 1e-9)
    for r in rows:
        assert r["r_mean"] <= segment_g.eps + r["Q"]
        assert r["r_mean_upper"] <= segment_g.eps + r["Q"]
        assert r["r_abs"] <= segment_g.eps + r["Q"]


def test_gronwall_probe(smooth):
    F, f = smooth.F, smooth.f0
    L = f.lipschitz_x
    initial = [np.array([0.0]), np.array([0.5])]
    paths = sample_paths(F, 5, 0)
    rows = []
    for d in (1e-1, 1e-2, 1e-3):
        rep = stability_probe(f, [Shifted(f, [d / F.horizon])], F, initial, paths)
        rows.append(rep["rows"][0]["trajectory"])
        assert rows[-1] <= d * math.exp(L * F.horizon) + 1e-12
    assert rows[0] > rows[1] > rows[2]


def test_identical_perturbation_probe(smooth):
    rep = stability_probe(smooth.f0, [smooth.f0], smooth.F, [np.array([0.1])], sample_paths(smooth.F, 3, 0))
    assert rep["rows"][0]["trajectory"] == 0.0 and rep["rows"][0]["picard"] == 0.0


def test_homotopy_endpoints(segment_state, segment):
    F, f = segment.F, segment_state.final
    v = integrate(segment.f0, 0.0, [0.3], F)
    assert homotopy(v, 1.0, f, F) is v
    ref = integrate(f, 0.0, [0.3], F)
    h0 = homotopy(v, 0.0, f, F)
    np.testing.assert_array_equal(h0.states, ref.states)
    mid = homotopy(v, 0.5, f, F)
    assert is_solution(mid, F)
    with pytest.raises(ValueError):
        homotopy(v, 1.5, f, F)


def test_homotopy_rejects_non_solutions(segment):
    F = segment.F
    fake = Trajectory(np.array([0.0, 1.0]), np.array([[0.0], [3.0]]), np.array([[3.0], [3.0]]), 0.0, np.zeros(1))
    with pytest.raises(ValueError):
        homotopy(fake, 0.5, segment.f0, F)


def test_h_bound_matches_series():
    for K in range(1, 10):
        for T in (0.5, 1.0, 3.0):
            series = 2.0 ** (1 - K) * T + 2.0 ** (-K) + sum(2.0 ** (-l) + 2.0 ** (1 - l) * T for l in range(K + 1, 200))
            assert h_bound(K, T) == pytest.approx(series, rel=1e-14)


def test_schedule_invariants(segment_state):
    s = segment_state
    assert s.status == "ok" and s.K == 3
    assert s.levels[0].eps == pytest.approx(s.delta0 / 2)
    for k in range(1, s.K):
        prev, cur = s.levels[k - 1], s.levels[k]
        N = prev.crossings
        bound = min(prev.delta / (2 * N), 2.0 ** (-k) / N)
        if prev.max_slope > 0:
            bound = min(bound, 2.0 ** (-k) / (N * prev.max_slope))
        assert cur.eps <= bound * (1 + 1e-15)
        assert cur.delta <= prev.delta / 2 * (1 + 1e-15)
        assert prev.crossings >= 2 * prev.crossings_measured


def test_h_integral_decreases(segment_state):
    s = segment_state
    hs = [s.h0] + [r.h_integral for r in s.levels]
    assert all(b <= a + 1e-12 for a, b in zip(hs, hs[1:]))
    for r in s.levels:
        assert r.h_integral <= r.h_bound


def test_final_selection_is_extremal(segment_state, segment):
    f = segment_state.final
    t = np.linspace(0, 1, 300)
    x = np.random.default_rng(0).uniform(-1.5, 1.5, (300, 1))
    assert set(np.round(f.evaluate_many(t, x)[:, 0], 12)) <= {-1.0, 1.0}


def test_infeasible_schedule(segment):
    s = build_extremal(segment.F, segment.f0, 1e-300, 2, paths=2, h_paths=1)
    assert s.status == "schedule_infeasible" and s.K == 0


def test_cover_limit_makes_schedule_infeasible(rotating):
    s = build_extremal(rotating.F, rotating.f0, 1.0, 2, paths=2, h_paths=1, max_cells=8)
    assert s.status == "schedule_infeasible"
    assert "cells" in s.reason


def test_bad_base_selection(segment):
    with pytest.raises(HypothesisError):
        build_extremal(segment.F, ConstantMap([2.0]), 0.1, 1)


def test_state_json(segment_state):
    d = segment_state.to_json(include_tree=False)
    assert d["levels_built"] == 3 and len(d["levels"]) == 3
    assert isinstance(segment_state, IterationState)
    assert "tree" not in d


def test_function_map_lipschitz():
    f = FunctionMap(lambda t, x: x, 1, 0.0, 1.0)
    assert f.path_lipschitz(2.0) == pytest.approx(2.0)
