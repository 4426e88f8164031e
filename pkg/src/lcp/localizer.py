"""Dissimilarities and the exponential localizer ``H_h(x, x') = exp(-d(x, x')/h)``.

Every dissimilarity exposes a scalar call ``d(x1, x2)`` and a vectorized
``pairwise(A, B)`` returning the ``len(A) x len(B)`` matrix.  Feature arrays
are 2-D ``(n, p)``; 1-D inputs are read as a single feature column.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)

PAIR_SUBSAMPLE = 2000


def as_features(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x.reshape(-1, 1)
    return x


def _as_point(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float)).ravel()


class Dissimilarity:
    """Base class: subclasses implement :meth:`pairwise`.

    ``symmetric`` lets callers reuse one matrix for both argument orders.
    """

    symmetric = False

    def pairwise(self, A, B) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x1, x2) -> float:
        return float(self.pairwise(_as_point(x1)[None, :], _as_point(x2)[None, :])[0, 0])


class Euclidean(Dissimilarity):
    symmetric = True

    def pairwise(self, A, B):
        return cdist(as_features(A), as_features(B))

    def __repr__(self):
        return "Euclidean()"


@dataclass(frozen=True)
class HardBall(Dissimilarity):
    """0 inside the closed Euclidean ball of ``radius``, ``+inf`` outside."""

    radius: float
    symmetric = True

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def pairwise(self, A, B):
        dist = cdist(as_features(A), as_features(B))
        # boundary belongs to the ball; absorb round-off in sqrt
        return np.where(dist <= self.radius * (1 + 1e-12), 0.0, np.inf)


def hard_threshold_dissimilarity(radius: float) -> HardBall:
    return HardBall(radius)


@dataclass(frozen=True, eq=False)
class Composite(Dissimilarity):
    """Spread-aware composite dissimilarity.

    ``d = |rho(x1) - rho(x2)| / sigma2 + (w * |P_par (x1-x2)| + (1-w) * |P_perp (x1-x2)|) / sigma1``

    A term whose normalizer is zero is dropped.
    """

    spread: object
    u_par: np.ndarray
    u_perp: np.ndarray
    omega: float
    sigma1: float
    sigma2: float
    meta: dict = field(default_factory=dict, compare=False)
    symmetric = True

    def _rho(self, X):
        return np.asarray(self.spread.predict(X), dtype=float).reshape(-1, 1)

    def pairwise(self, A, B):
        A, B = as_features(A), as_features(B)
        out = np.zeros((A.shape[0], B.shape[0]))
        if self.sigma2 > 0:
            out += cdist(self._rho(A), self._rho(B)) / self.sigma2
        if self.sigma1 > 0:
            pos = np.zeros_like(out)
            if self.omega > 0 and self.u_par.shape[1]:
                pos += self.omega * cdist(A @ self.u_par, B @ self.u_par)
            if self.omega < 1 and self.u_perp.shape[1]:
                pos += (1 - self.omega) * cdist(A @ self.u_perp, B @ self.u_perp)
            out += pos / self.sigma1
        return out


def _pair_mean(fn, X, rng=None):
    """Mean of ``fn(X, X)`` over ordered pairs i != j, subsampled above 2000 points."""
    n = X.shape[0]
    if n > PAIR_SUBSAMPLE:
        rng = np.random.default_rng(0) if rng is None else rng
        X = X[rng.choice(n, PAIR_SUBSAMPLE, replace=False)]
        n = PAIR_SUBSAMPLE
    D = fn(X, X)
    return float((D.sum() - np.trace(D)) / (n * (n - 1)))


def finite_difference_jacobian(fn, X) -> np.ndarray:
    """Central differences of a scalar function, step ``1e-4 * (1 + |x_j|)``."""
    X = as_features(X)
    n, p = X.shape
    J = np.empty((n, p))
    for j in range(p):
        step = 1e-4 * (1 + np.abs(X[:, j]))
        Xp, Xm = X.copy(), X.copy()
        Xp[:, j] += step
        Xm[:, j] -= step
        J[:, j] = (np.asarray(fn(Xp)) - np.asarray(fn(Xm))) / (2 * step)
    return J


def composite_dissimilarity(spread_model, training_features, p0=1, jacobian=None, rng=None):
    """Fit the composite dissimilarity on the training split.

    Parameters
    ----------
    spread_model : object
        Fitted spread model with ``predict`` returning ``rho(x) > 0`` and,
        for the Jacobian, ``log_predict`` returning ``f(x) = log rho(x)``
        (``log(predict)`` is used otherwise).
    training_features : array-like of shape (n0, p)
    p0 : int
        Number of leading right singular vectors spanning ``P_par``.
    jacobian : array-like of shape (n0, p), optional
        Rows ``d f^{-i}(X_i) / d X_i``.  When omitted, central finite
        differences of the full-data ``f`` are used.
    """
    X = as_features(training_features)
    n0, p = X.shape
    if n0 < 2:
        raise ValueError("need at least two training points")
    if jacobian is None:
        log_fn = getattr(spread_model, "log_predict", None)
        if log_fn is None:
            log_fn = lambda Z: np.log(spread_model.predict(Z))  # noqa: E731
        jacobian = finite_difference_jacobian(log_fn, X)
    J = np.asarray(jacobian, dtype=float).reshape(n0, p)
    p0 = min(int(p0), p)
    if not np.any(J):
        basis = np.eye(p)
    else:
        _, _, vt = np.linalg.svd(J, full_matrices=True)
        basis = vt.T
    u_par, u_perp = basis[:, :p0], basis[:, p0:]

    def proj_dist(u):
        return lambda A, B: cdist(A @ u, B @ u)

    mu_par = _pair_mean(proj_dist(u_par), X, rng)
    mu_perp = _pair_mean(proj_dist(u_perp), X, rng) if u_perp.shape[1] else 0.0
    omega = mu_perp / (mu_perp + mu_par) if mu_perp + mu_par > 0 else 0.0

    def position(A, B):
        out = np.zeros((A.shape[0], B.shape[0]))
        if omega > 0:
            out += omega * cdist(A @ u_par, B @ u_par)
        if omega < 1 and u_perp.shape[1]:
            out += (1 - omega) * cdist(A @ u_perp, B @ u_perp)
        return out

    sigma1 = _pair_mean(position, X, rng)

    def spread_dist(A, B):
        return cdist(
            np.asarray(spread_model.predict(A)).reshape(-1, 1),
            np.asarray(spread_model.predict(B)).reshape(-1, 1),
        )

    sigma2 = _pair_mean(spread_dist, X, rng)
    if sigma1 <= 0:
        logger.info("positional term has zero mean over training pairs; dropped")
        sigma1 = 0.0
    if sigma2 <= 0:
        logger.info("spread term has zero mean over training pairs; dropped")
        sigma2 = 0.0
    return Composite(
        spread=spread_model,
        u_par=u_par,
        u_perp=u_perp,
        omega=float(omega),
        sigma1=float(sigma1),
        sigma2=float(sigma2),
        meta={"mu_par": mu_par, "mu_perp": mu_perp, "p0": p0},
    )


@dataclass(frozen=True)
class LocalizerSpec:
    """Exponential localizer with dissimilarity ``d`` and bandwidth ``h``."""

    dissimilarity: Dissimilarity
    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")

    def matrix(self, A, B) -> np.ndarray:
        """``H[i, j] = exp(-d(A_i, B_j) / h)``; infinite dissimilarity maps to 0."""
        return np.exp(-self.dissimilarity.pairwise(A, B) / self.bandwidth)


class ConstantLocalizer(LocalizerSpec):
    """``H = 1`` everywhere: the localizer under which LCP is split conformal."""

    def __init__(self):
        object.__setattr__(self, "dissimilarity", None)
        object.__setattr__(self, "bandwidth", np.inf)

    def matrix(self, A, B):
        return np.ones((as_features(A).shape[0], as_features(B).shape[0]))

    def __repr__(self):
        return "ConstantLocalizer()"


def kernel_eval(spec: LocalizerSpec, x1, x2) -> float:
    if not spec.bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    return float(spec.matrix(_as_point(x1)[None, :], _as_point(x2)[None, :])[0, 0])


def weight_row(spec: LocalizerSpec, test_x, calib_xs) -> np.ndarray:
    """Normalized weights ``p_{n+1, .}``; the last entry is the self-weight."""
    raw = np.append(spec.matrix(_as_point(test_x)[None, :], as_features(calib_xs))[0], 1.0)
    return raw / raw.sum()


@dataclass(frozen=True)
class WeightTable:
    """Localizer values consumed by the fast LCP scan.

    ``Q[i, k] = sum_{j <= k} H[i, j]`` over calibration points in score order.
    The test-dependent parts (``h_in = H[i, n+1]``, ``h_ni = H[n+1, i]``) are
    ``None`` until :meth:`with_test` is called.
    """

    Q: np.ndarray
    h_in: np.ndarray | None = None
    h_ni: np.ndarray | None = None

    @property
    def n(self):
        return self.Q.shape[0]

    def with_test(self, spec: LocalizerSpec, calib_xs, test_x) -> "WeightTable":
        calib_xs = as_features(calib_xs)
        t = _as_point(test_x)[None, :]
        h_in = spec.matrix(calib_xs, t)[:, 0]
        h_ni = spec.matrix(t, calib_xs)[0]
        return WeightTable(self.Q, h_in, h_ni)

    @property
    def test_row(self) -> np.ndarray:
        """Raw ``H[n+1, .]`` including the self-weight 1."""
        return np.append(self.h_ni, 1.0)

    def normalized_rows(self) -> np.ndarray:
        """Full ``(n+1) x (n+1)`` matrix ``p^H`` with the test point last."""
        n = self.n
        H = np.empty((n + 1, n + 1))
        H[:n, 0] = self.Q[:, 0]
        H[:n, 1:n] = np.diff(self.Q, axis=1)
        H[:n, n] = self.h_in
        H[n] = self.test_row
        return H / H.sum(axis=1, keepdims=True)


def cumulative_matrix(spec: LocalizerSpec, calib_xs) -> WeightTable:
    """Unnormalized cumulative matrix over score-sorted calibration features."""
    X = as_features(calib_xs)
    return WeightTable(np.cumsum(spec.matrix(X, X), axis=1))
