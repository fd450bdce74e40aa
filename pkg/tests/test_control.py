import numpy as np
import pytest

from extremal_flow.control import (BangBangFeedback, ChatteringFeedback, ControlSystem, closed_loop, relax, synthesize,
                                   to_multimap)
from extremal_flow.geometry import Polytope, contains, hausdorff
from extremal_flow.multimap import Box, HypothesisError, SeedSet, VertexCombination


def scalar_system(dynamics="u0", controls=((-1.0,), (1.0,)), lipschitz=None):
    return ControlSystem([dynamics], 1, list(controls), 1.0, Box([-3.0], [3.0]), SeedSet(Box([-1.0], [1.0])), 2.0,
                         lipschitz=lipschitz)


def test_scalar_multimap_is_segment():
    F = to_multimap(scalar_system(lipschitz=[0, 0]))
    assert hausdorff(F.value(0.3, [0.2]), Polytope([[-1.0], [1.0]])) == 0.0


def test_relaxing_dynamics_value():
    F = to_multimap(scalar_system("u0 - x0", lipschitz=[(0, 1), (0, 1)]))
    for x in (-0.5, 0.0, 1.2):
        P = F.value(0.0, [x])
        assert hausdorff(P, Polytope([[-1.0 - x], [1.0 - x]])) <= 1e-15


def test_single_control_is_singleton():
    F = to_multimap(scalar_system(controls=((0.5,),), lipschitz=[0]))
    assert len(F.value(0.0, [0.0])) == 1


def test_lex_rank():
    sys = ControlSystem(["u0 + u1", "u0 - u1"], 2, [[1, 0], [0, 1], [0, 0], [1, -1]], 1.0,
                        Box([-5.0, -5.0], [5.0, 5.0]), SeedSet(Box([-1.0, -1.0], [1.0, 1.0])), 3.0, lipschitz=[0] * 4)
    assert sys.lex_rank.tolist() == [3, 1, 0, 2]


def test_relax_constant_weights():
    sys = scalar_system(lipschitz=[0, 0])
    F = to_multimap(sys)
    f0 = relax(ChatteringFeedback([0, 1], ["0.5", "0.5"], 1), sys, F)
    assert isinstance(f0, VertexCombination)
    np.testing.assert_allclose(f0(np.linspace(0, 1, 5), np.zeros((5, 1))), 0.0)
    first = relax(ChatteringFeedback([1, 0], [1, 0], 1), sys, F)
    np.testing.assert_allclose(first.evaluate(0.2, [0.0]), [1.0])


def test_relax_merges_repeated_controls():
    sys = scalar_system(lipschitz=[0, 0])
    f0 = relax(ChatteringFeedback([1, 1], ["0.25", "0.75"], 1), sys)
    assert f0.indices == (1,)


def test_state_dependent_weights_stay_in_hull():
    sys = ControlSystem(["u0", "u1"], 2, [[1, 1], [-1, 1], [-1, -1]], 1.0, Box([-4.0, -4.0], [4.0, 4.0]),
                        SeedSet(Box([-0.5, -0.5], [0.5, 0.5])), 1.5, lipschitz=[0, 0, 0])
    F = to_multimap(sys)
    w = "0.25 + 0.2*sin(t + x0)"
    fb = ChatteringFeedback([0, 1, 2], [w, "0.5", f"0.5 - ({w})"], 2)
    f0 = relax(fb, sys, F)
    rng = np.random.default_rng(0)
    t = rng.random(100)
    x = rng.uniform(-2, 2, (100, 2))
    vals = f0(t, x)
    V = F.vertex_values(t, x)
    for k in range(100):
        assert contains(Polytope(V[k]), vals[k], tol=1e-9)


def test_weights_off_simplex_rejected():
    sys = scalar_system(lipschitz=[0, 0])
    with pytest.raises(ValueError):
        relax(ChatteringFeedback([0, 1], ["0.7", "0.7"], 1), sys)
    with pytest.raises(ValueError):
        ChatteringFeedback([0, 1, 0], ["0.5", "0.5", "0"], 1)


@pytest.fixture(scope="module")
def scalar_feedback(scalar_control):
    sc = scalar_control
    return synthesize(sc.system, sc.feedback, 0.05, 2, paths=10, h_paths=3)


def test_feedback_values_in_U(scalar_feedback):
    fb = scalar_feedback
    rng = np.random.default_rng(1)
    t = rng.random(500)
    x = rng.uniform(-1.5, 1.5, (500, 1))
    u = fb(t, x)
    assert set(u[:, 0].tolist()) <= {-1.0, 1.0}
    idx, residual = fb.control_index(t, x)
    assert np.max(residual) <= 1e-9
    np.testing.assert_array_equal(fb.sys.controls[idx], u)


def test_closed_loop_tracks_relaxed(scalar_feedback):
    fb = scalar_feedback
    for x0 in (-1.0, 0.0, 0.5):
        x = closed_loop(fb.sys, fb, 0.0, [x0])
        assert set(x.controls[:, 0].tolist()) <= {-1.0, 1.0}
        assert np.max(np.abs(x.states[:, 0] - x0)) <= 0.05 + 1e-6
        direct = fb.f.evaluate_many(x.times, x.states)
        np.testing.assert_allclose(x.derivatives, direct, atol=1e-9)


def test_tie_breaking_prefers_lex_smallest(scalar_feedback):
    # duplicate control images: both u = 1 and u = 2 reproduce f where f = 1
    fb = scalar_feedback
    sys = ControlSystem(["min(u0, 1)"], 1, [[2.0], [1.0], [-1.0]], 1.0, Box([-3.0], [3.0]),
                        SeedSet(Box([-1.0], [1.0])), 1.0, lipschitz=[0, 0, 0])
    twin = BangBangFeedback(sys, fb.F, fb.f0, fb.state)
    t = np.linspace(0, 1, 200)
    x = np.zeros((200, 1))
    u = twin(t, x)
    assert set(u[:, 0].tolist()) <= {-1.0, 1.0}


def test_unmatched_value_is_reported(scalar_feedback):
    fb = scalar_feedback
    sys = ControlSystem(["u0"], 1, [[0.5], [-0.5]], 1.0, Box([-3.0], [3.0]), SeedSet(Box([-1.0], [1.0])), 1.0,
                        lipschitz=[0, 0])
    with pytest.raises(HypothesisError):
        BangBangFeedback(sys, fb.F, fb.f0, fb.state)(np.array([0.1]), np.zeros((1, 1)))


def test_single_control_matches_relaxed():
    sys = scalar_system("0.5", controls=((0.0,),), lipschitz=[0])
    fb = synthesize(sys, ChatteringFeedback([0], ["1"], 1), 0.1, 1, paths=3, h_paths=1)
    x = closed_loop(sys, fb, 0.0, [0.2])
    np.testing.assert_allclose(x.states[:, 0], 0.2 + 0.5 * x.times, atol=1e-12)
    assert set(x.controls[:, 0].tolist()) == {0.0}
