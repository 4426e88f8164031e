import numpy as np
import pytest
from invariants import property_test

from lcp.localizer import (
    Composite,
    ConstantLocalizer,
    Euclidean,
    HardBall,
    LocalizerSpec,
    composite_dissimilarity,
    cumulative_matrix,
    finite_difference_jacobian,
    kernel_eval,
    weight_row,
)
from lcp.scores import UnitSpread


class ExpSpread:
    """rho(x) = exp(x_1), so log rho has gradient e_1."""

    def predict(self, X):
        return np.exp(np.asarray(X)[:, 0])

    def log_predict(self, X):
        return np.asarray(X)[:, 0]


def test_kernel_values():
    spec = LocalizerSpec(Euclidean(), 2.0)
    assert kernel_eval(spec, [0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.exp(-2.5))
    assert kernel_eval(spec, [1.0, 2.0], [1.0, 2.0]) == 1.0


def test_nonpositive_bandwidth_rejected():
    with pytest.raises(ValueError):
        LocalizerSpec(Euclidean(), 0.0)
    with pytest.raises(ValueError):
        LocalizerSpec(Euclidean(), -1.0)


def test_hard_ball_is_indicator():
    spec = LocalizerSpec(HardBall(1.0), 1.0)
    H = spec.matrix(np.array([[0.0]]), np.array([[0.0], [1.0], [1.0000001], [2.0]]))
    np.testing.assert_array_equal(H[0], [1.0, 1.0, 0.0, 0.0])


def test_constant_localizer():
    H = ConstantLocalizer().matrix(np.zeros((3, 2)), np.ones((4, 2)))
    np.testing.assert_array_equal(H, np.ones((3, 4)))


def test_weight_row_sums_to_one():
    w = weight_row(LocalizerSpec(Euclidean(), 1.0), [0.0], np.array([[0.0], [1.0], [5.0]]))
    assert w.sum() == pytest.approx(1.0)
    assert w[-1] == w[0]


test_weight_rows_normalized = property_test("weight rows normalized", 1000)


def test_cumulative_matrix_rows():
    spec = LocalizerSpec(Euclidean(), 1.0)
    X = np.array([[0.0], [1.0], [3.0]])
    Q = cumulative_matrix(spec, X).Q
    H = np.exp(-np.abs(X - X.T))
    np.testing.assert_allclose(Q, np.cumsum(H, axis=1))


def test_finite_difference_jacobian_linear():
    X = np.random.default_rng(0).normal(size=(5, 3))
    J = finite_difference_jacobian(lambda Z: Z @ np.array([1.0, -2.0, 0.5]), X)
    np.testing.assert_allclose(J, np.tile([1.0, -2.0, 0.5], (5, 1)), atol=1e-8)


def test_composite_direction_and_normalizers():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 3))
    d = composite_dissimilarity(ExpSpread(), X, p0=1)
    assert isinstance(d, Composite)
    assert abs(abs(d.u_par[0, 0]) - 1) < 1e-6
    assert 0 < d.omega < 1 and d.sigma1 > 0 and d.sigma2 > 0
    D = d.pairwise(X[:50], X[:50])
    np.testing.assert_allclose(np.diag(D), 0.0, atol=1e-12)
    np.testing.assert_allclose(D, D.T, atol=1e-12)
    # both terms average to one over training pairs
    off = ~np.eye(300, dtype=bool)
    full = d.pairwise(X, X)[off].mean()
    assert full == pytest.approx(2.0, rel=0.02)


def test_composite_one_dimensional_reduces_to_spread_term():
    # the whole line is the gradient direction, which carries no positional weight
    X = np.linspace(-1, 1, 40).reshape(-1, 1)
    d = composite_dissimilarity(ExpSpread(), X)
    assert d.omega == 0.0 and d.sigma1 == 0.0
    rho = np.exp(X[:, 0])
    expected = np.abs(rho[:, None] - rho[None, :]) / d.sigma2
    np.testing.assert_allclose(d.pairwise(X, X), expected, rtol=1e-10)


def test_composite_constant_spread_drops_spread_term():
    X = np.random.default_rng(2).normal(size=(30, 2))
    d = composite_dissimilarity(UnitSpread(), X)
    assert d.sigma2 == 0.0 and d.sigma1 > 0


def test_composite_needs_two_points():
    with pytest.raises(ValueError):
        composite_dissimilarity(ExpSpread(), np.zeros((1, 2)))
