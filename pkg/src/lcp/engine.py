"""Split localized conformal prediction: fast thresholds and band types.

Calibration scores are kept in ascending order.  For a test point the
scan needs three vectors (see :class:`LcpState`), which are built from two
test-independent row sums of the calibration localizer matrix plus one
``O(n)`` kernel row per test point.  The threshold itself is found by a
single ``O(n log n)`` pass (:mod:`lcp._scan`).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import _scan
from .localizer import ConstantLocalizer, LocalizerSpec, WeightTable, as_features
from .wdist import TOL

DEBUG = os.environ.get("LCP_DEBUG", "") not in ("", "0")
DEBUG_MAX_N = 2000
BLOCK_ENTRIES = 1 << 22


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    """Calibration scores in ascending order with aligned features.

    ``order`` maps sorted positions back to input rows.  ``ell[k - 1]`` is the
    number of scores strictly below ``V_k`` for ``k = 1..n``; ``ell[n] = n``
    stands for the sentinel ``V_{n+1} = +inf``.
    """

    scores: np.ndarray
    features: np.ndarray
    order: np.ndarray
    ell: np.ndarray

    def __post_init__(self):
        if self.scores.ndim != 1 or self.scores.size == 0:
            raise ValueError("need a nonempty 1-D score vector")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("calibration scores must be finite")
        if np.any(np.diff(self.scores) < 0):
            raise ValueError("scores are not sorted")
        if self.features.shape[0] != self.scores.size:
            raise ValueError("features and scores disagree in length")

    @classmethod
    def build(cls, scores, features=None) -> "CalibrationSet":
        scores = np.asarray(scores, dtype=float).ravel()
        if features is None:
            features = np.zeros((scores.size, 1))
        features = as_features(features)
        if features.shape[0] != scores.size:
            raise ValueError("features and scores disagree in length")
        order = np.argsort(scores, kind="stable")
        sv = scores[order]
        ell = np.append(np.searchsorted(sv, sv, side="left"), sv.size).astype(np.int64)
        return cls(sv, features[order], order, ell)

    @property
    def n(self) -> int:
        return self.scores.size

    def threshold(self, k: int) -> float:
        """``V_k`` with sentinels ``V_0 = -inf`` and ``V_{n+1} = +inf``."""
        if k <= 0:
            return -np.inf
        if k > self.n:
            return np.inf
        return float(self.scores[k - 1])


@dataclass(frozen=True, eq=False)
class LcpState:
    """Per-test quantities for the scan.

    theta[i]       mass of row i strictly below V_i, normalized including the test column
    theta_plus[i]  theta[i] plus row i's weight on the test point
    test_cum[j]    test-row mass on the j smallest calibration scores, j = 0..n
    """

    theta: np.ndarray
    theta_plus: np.ndarray
    test_cum: np.ndarray
    ell: np.ndarray

    @property
    def n(self) -> int:
        return self.theta.size

    @property
    def theta_tilde(self) -> np.ndarray:
        return self.test_cum[self.ell]

    @property
    def test_weight(self) -> np.ndarray:
        return self.theta_plus - self.theta

    def partition(self) -> np.ndarray:
        """Label 1, 2 or 3 for each calibration index (strict comparisons)."""
        tt = self.theta_tilde[: self.n]
        labels = np.full(self.n, 3, dtype=np.int64)
        labels[self.theta >= tt - TOL] = 2
        labels[self.theta_plus < tt - TOL] = 1
        return labels

    @classmethod
    def from_table(cls, calib: CalibrationSet, table: WeightTable) -> "LcpState":
        if table.h_in is None or table.h_ni is None:
            raise ValueError("weight table carries no test point")
        ell = calib.ell
        n = calib.n
        Q = table.Q
        cq = np.where(ell[:n] > 0, Q[np.arange(n), np.maximum(ell[:n] - 1, 0)], 0.0)
        rs = Q[:, -1]
        return _assemble(cq, rs, table.h_in[None, :], table.h_ni[None, :], ell)[0]

    def counts(self, strict: bool = True) -> np.ndarray:
        """Scan counts for k = 1..n+1 (divide by n+1 for ``S(k)``)."""
        return _scan.scan_counts(self.theta, self.theta_plus, self.theta_tilde, self.ell, strict)


def _scan_vectors(cq, rs, h_in, h_ni):
    """``(theta, theta_plus, test_cum)`` for a block of test kernel rows."""
    denom = rs[None, :] + h_in
    theta = cq[None, :] / denom
    theta_plus = (cq[None, :] + h_in) / denom
    T, n = h_ni.shape
    test_cum = np.zeros((T, n + 1))
    np.cumsum(h_ni, axis=1, out=test_cum[:, 1:])
    test_cum /= test_cum[:, -1:] + 1.0
    return theta, theta_plus, test_cum


def _assemble(cq, rs, h_in, h_ni, ell):
    theta, theta_plus, test_cum = _scan_vectors(cq, rs, h_in, h_ni)
    return [LcpState(theta[t], theta_plus[t], test_cum[t], ell) for t in range(theta.shape[0])]


def direct_counts(state: LcpState, strict: bool = True) -> np.ndarray:
    """Quadratic reference for :meth:`LcpState.counts`, evaluated cell by cell."""
    ell = state.ell
    n = state.n
    below = ell[:n, None] < ell[None, :]
    c = np.where(below, state.theta[:, None], state.theta_plus[:, None])
    tt = state.theta_tilde[None, :]
    hit = c < tt - TOL if strict else c <= tt + TOL
    return hit.sum(axis=0)


@dataclass(frozen=True)
class PredictionBand:
    """Score threshold and its y-interval.

    ``alpha_tilde`` is the level used against the test-centered distribution:
    for the LCP rules it is that distribution's mass at and below the threshold.
    ``k_star = 0`` (threshold ``-inf``) only arises from the randomized rule.
    """

    k_star: int
    threshold: float
    alpha_tilde: float
    draw: float | None = None
    lower: float = -np.inf
    upper: float = np.inf

    @property
    def infinite(self) -> bool:
        return self.threshold == np.inf

    @property
    def empty(self) -> bool:
        return self.lower > self.upper

    def with_interval(self, lower: float, upper: float) -> "PredictionBand":
        return replace(self, lower=float(lower), upper=float(upper))


def _effective_level(state: LcpState, k: int) -> float:
    if k <= 0:
        return 0.0
    if k > state.n:
        return 1.0
    return float(state.test_cum[k])


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")


def _debug_check(state: LcpState, counts: np.ndarray):
    if counts[0] != 0 or np.any(np.diff(counts) < 0):
        raise AssertionError("scan counts must start at 0 and be nondecreasing")
    if state.n <= DEBUG_MAX_N and not np.array_equal(counts, direct_counts(state)):
        raise AssertionError("partition scan disagrees with direct evaluation")


def split_lcp_fast(calib: CalibrationSet, state: LcpState, alpha: float) -> PredictionBand:
    """Largest k with ``S(k) < alpha`` and the closure threshold ``V_k``."""
    _check_alpha(alpha)
    counts = state.counts(strict=True)
    if DEBUG:
        _debug_check(state, counts)
    k = int(_scan.kstar_deterministic(counts, alpha * (calib.n + 1)))
    return PredictionBand(k, calib.threshold(k), _effective_level(state, k))


def randomized_threshold(
    calib: CalibrationSet, state: LcpState, alpha: float, rng_draw: float
) -> PredictionBand:
    """Randomized rule with exact marginal coverage ``alpha``.

    At each candidate threshold the binding level is kept with probability
    ``(alpha - alpha_2) / (alpha_1 - alpha_2)``; one uniform draw per test
    point is shared by all candidates, so the accepted set stays a down-set.
    """
    _check_alpha(alpha)
    if not 0.0 <= rng_draw <= 1.0:
        raise ValueError("rng_draw must lie in [0, 1]")
    strict = state.counts(strict=True)
    loose = state.counts(strict=False)
    k = int(_scan.kstar_randomized(strict, loose, alpha * (calib.n + 1), rng_draw))
    return PredictionBand(k, calib.threshold(k), _effective_level(state, k), draw=float(rng_draw))


def _naive_k(scores: np.ndarray, test_cum: np.ndarray, level: float) -> int:
    """k of ``Q(level; F)``, taken as the last index of its tie group."""
    n = scores.size
    if level <= TOL:
        return 0
    j = int(np.searchsorted(test_cum, level - TOL, side="left"))
    if j == 0:
        return 0
    if j > n:
        return n + 1
    return int(np.searchsorted(scores, scores[j - 1], side="right"))


def naive_band(calib: CalibrationSet, state: LcpState, alpha: float) -> PredictionBand:
    """Unadjusted threshold ``Q(alpha; F)`` of the test-centered distribution."""
    _check_alpha(alpha)
    k = _naive_k(calib.scores, state.test_cum, alpha)
    return PredictionBand(k, calib.threshold(k), float(alpha))


def approx_conditional_band(
    calib: CalibrationSet, state: LcpState, alpha: float, epsilon_fn, test_x=None
) -> PredictionBand:
    """``Q(alpha; F) + epsilon(x)`` for a caller-supplied nonnegative slack."""
    eps = float(epsilon_fn(test_x)) if callable(epsilon_fn) else float(epsilon_fn)
    if not eps >= 0:
        raise ValueError(f"epsilon must be nonnegative, got {eps!r}")
    band = naive_band(calib, state, alpha)
    return replace(band, threshold=band.threshold + eps)


def split_cp_threshold(scores, alpha: float) -> float:
    """Split conformal threshold: the ``ceil((n+1) alpha)``-th smallest score."""
    _check_alpha(alpha)
    v = np.sort(np.asarray(scores, dtype=float))
    k = math.ceil((v.size + 1) * alpha - 1e-9)
    return float(v[k - 1]) if k <= v.size else np.inf


def calibration_sums(spec: LocalizerSpec, calib: CalibrationSet, block_entries=BLOCK_ENTRIES):
    """Row sums ``(cq, rs)`` of the calibration localizer matrix.

    ``cq[i]`` sums ``H[i, j]`` over calibration points scoring strictly below
    ``V_i``; ``rs[i]`` sums the whole row including ``H[i, i] = 1``.  Rows
    are grouped by distinct feature vectors and built in blocks, so memory
    stays bounded and discrete features cost one kernel row per value.
    """
    n = calib.n
    ell = calib.ell[:n]
    if isinstance(spec, ConstantLocalizer):
        return ell.astype(float), np.full(n, float(n))
    X = calib.features
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    cq = np.empty(n)
    rs = np.empty(n)
    step = max(1, block_entries // n)
    for start in range(0, uniq.shape[0], step):
        stop = min(start + step, uniq.shape[0])
        C = np.cumsum(spec.matrix(uniq[start:stop], X), axis=1)
        members = np.flatnonzero((inverse >= start) & (inverse < stop))
        g = inverse[members] - start
        lm = ell[members]
        cq[members] = np.where(lm > 0, C[g, np.maximum(lm - 1, 0)], 0.0)
        rs[members] = C[g, -1]
    return cq, rs


@dataclass(frozen=True, eq=False)
class BandBatch:
    """Bands for many test points, one entry per test row."""

    k_star: np.ndarray
    threshold: np.ndarray
    alpha_tilde: np.ndarray
    draw: np.ndarray | None = None

    @property
    def infinite(self) -> np.ndarray:
        return np.isinf(self.threshold) & (self.threshold > 0)

    def __len__(self):
        return self.k_star.size

    def band(self, t: int) -> PredictionBand:
        draw = None if self.draw is None else float(self.draw[t])
        return PredictionBand(
            int(self.k_star[t]), float(self.threshold[t]), float(self.alpha_tilde[t]), draw
        )


RULES = ("lcp", "randomized", "naive")


class SplitLCP:
    """Calibrated split-LCP predictor for batches of test features.

    The test-independent sums are computed once at construction (``O(n^2)``
    kernel evaluations, fewer with repeated features); each test point then
    costs one kernel row and one scan.
    """

    def __init__(self, spec: LocalizerSpec, calib: CalibrationSet):
        self.spec = spec
        self.calib = calib
        self.cq, self.rs = calibration_sums(spec, calib)
        dis = getattr(spec, "dissimilarity", None)
        self._symmetric = isinstance(spec, ConstantLocalizer) or getattr(dis, "symmetric", False)

    @classmethod
    def fit(cls, spec: LocalizerSpec, scores, features) -> "SplitLCP":
        return cls(spec, CalibrationSet.build(scores, features))

    def _kernel_rows(self, Xt):
        h_ni = self.spec.matrix(Xt, self.calib.features)
        if self._symmetric:
            return h_ni, h_ni
        return self.spec.matrix(self.calib.features, Xt).T, h_ni

    def scan_inputs(self, test_features):
        """Yield ``(rows, theta, theta_plus, test_cum)`` blocks of test points."""
        Xt = as_features(test_features)
        n = self.calib.n
        step = max(1, BLOCK_ENTRIES // n)
        for start in range(0, Xt.shape[0], step):
            rows = slice(start, min(start + step, Xt.shape[0]))
            h_in, h_ni = self._kernel_rows(Xt[rows])
            yield (rows, *_scan_vectors(self.cq, self.rs, h_in, h_ni))

    def state(self, test_x) -> LcpState:
        """Scan inputs at one test point (a scalar or a length-p vector)."""
        x = np.asarray(test_x, dtype=float)
        x = x.reshape(1, -1) if x.ndim <= 1 else x[:1]
        _, theta, theta_plus, test_cum = next(self.scan_inputs(x))
        return LcpState(theta[0], theta_plus[0], test_cum[0], self.calib.ell)

    def predict(self, test_features, alpha: float, rule: str = "lcp", rng=None) -> BandBatch:
        """Bands for every test row under ``rule`` in ``{"lcp", "randomized", "naive"}``."""
        _check_alpha(alpha)
        if rule not in RULES:
            raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
        Xt = as_features(test_features)
        T, n = Xt.shape[0], self.calib.n
        k = np.empty(T, dtype=np.int64)
        level = np.empty(T)
        draws = None
        if rule == "randomized":
            rng = np.random.default_rng(rng)
            draws = rng.random(T)
        ell2 = self.calib.ell[None, :]
        for rows, theta, theta_plus, test_cum in self.scan_inputs(Xt):
            if rule == "naive":
                k[rows] = [_naive_k(self.calib.scores, tc, alpha) for tc in test_cum]
                level[rows] = alpha
                continue
            tt = test_cum[:, self.calib.ell]
            d = draws[rows] if draws is not None else np.zeros(theta.shape[0])
            kb = _scan.batch_kstar(
                theta, theta_plus, tt, ell2, True, alpha * (n + 1), rule == "randomized", d
            )
            k[rows] = kb
            padded = np.concatenate([np.zeros((kb.size, 1)), test_cum[:, 1:], np.ones((kb.size, 1))], axis=1)
            level[rows] = padded[np.arange(kb.size), kb]
        sentinel = np.concatenate([[-np.inf], self.calib.scores, [np.inf]])
        return BandBatch(k, sentinel[k], level, draws)
