import numpy as np
import pytest

from extremal_flow.expressions import Expression, ExpressionError, ExpressionVector


def test_evaluates_vectorized():
    e = Expression("sin(t) + x0 * x[1] - 2**2", 2)
    t = np.array([0.0, np.pi / 2])
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_allclose(e(t, x), [2.0 - 4.0, 1.0 - 3.0 - 4.0])


def test_constant_broadcasts():
    e = Expression(0.5, 1)
    assert e(np.zeros(3), np.zeros((3, 1))).tolist() == [0.5, 0.5, 0.5]
    assert not e.depends_on_t and not e.depends_on_x


def test_dependency_flags():
    assert Expression("t * 2", 1).depends_on_t
    assert Expression("x0", 1).depends_on_x


@pytest.mark.parametrize("source", [
    "__import__('os')", "x.__class__", "lambda: 1", "open('f')", "y + 1", "[1, 2]", "'a'", "sin(t, k=1)",
])
def test_rejects_unsafe_or_unknown(source):
    with pytest.raises(ExpressionError):
        Expression(source, 1)


def test_syntax_error():
    with pytest.raises(ExpressionError):
        Expression("1 +", 1)


def test_index_out_of_range():
    e = Expression("x[3]", 2)
    with pytest.raises(ExpressionError):
        e(np.zeros(1), np.zeros((1, 2)))


def test_control_binding():
    v = ExpressionVector(["u0 - x0"], 1, control_dim=1)
    g = v.with_control([1.0])
    np.testing.assert_allclose(g(np.zeros(2), np.array([[0.5], [2.0]])), [[0.5], [-1.0]])


def test_component_count():
    with pytest.raises(ExpressionError):
        ExpressionVector(["t", "t"], 1)
