"""Bandwidth selection for the exponential localizer.

For every candidate bandwidth three quantities are estimated on the training
split, using its cross-validated scores as stand-in calibration data:

* ``C1`` fraction of infinite bands (leave-one-out over a subsample)
* ``C2`` mean finite scaled band length (same leave-one-out runs)
* ``C3`` spread of finite scaled lengths across bootstrap calibration sets

and ``h`` minimizes ``C2 + lam * C3`` subject to ``C1 <= delta``.  All
bandwidths share the same subsamples and resamples, so differences between
them are not blurred by resampling noise.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _scan
from .engine import _scan_vectors
from .localizer import PAIR_SUBSAMPLE, as_features

logger = logging.getLogger(__name__)

BLOCK_ENTRIES = 1 << 22


@dataclass(frozen=True)
class TuneConfig:
    h_grid: tuple | str = "auto"
    lam: float = 1.0
    delta: float = 0.05
    B: int = 20
    subsample_cap: int | None = None
    max_repeats: int = 5
    grid_size: int = 20
    alpha: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.h_grid, str):
            grid = np.asarray(self.h_grid, dtype=float)
            if grid.size == 0:
                raise ValueError("bandwidth grid is empty")
            if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
                raise ValueError("bandwidth grid must be positive and strictly increasing")
            object.__setattr__(self, "h_grid", tuple(float(h) for h in grid))
        elif self.h_grid != "auto":
            raise ValueError("h_grid must be a list of bandwidths or 'auto'")
        if self.B < 2:
            raise ValueError("B must be at least 2")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class TuneReport:
    h_grid: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    selected: float
    lam: float
    delta: float
    infeasible: bool = False
    no_finite: np.ndarray = field(default=None)

    @property
    def objective(self) -> np.ndarray:
        return self.C2 + self.lam * self.C3

    @property
    def feasible(self) -> np.ndarray:
        return self.C1 <= self.delta

    def rows(self) -> list[dict]:
        return [
            {
                "h": float(h),
                "infinite_frac": float(c1),
                "avg_length": float(c2),
                "variability": float(c3),
                "objective": float(c2 + self.lam * c3),
                "feasible": bool(c1 <= self.delta),
                "selected": bool(h == self.selected),
            }
            for h, c1, c2, c3 in zip(self.h_grid, self.C1, self.C2, self.C3)
        ]

    def to_csv(self, path):
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)


def auto_grid(dissimilarity, training_features, grid_size: int = 20, rng=None) -> np.ndarray:
    """Geometric grid whose ends put ``exp(-d/h)`` at 1e-4 and 0.99 for the median pair.

    Falls back to ``[1.0]`` when all training pairs are at distance zero.
    """
    X = as_features(training_features)
    if X.shape[0] < 2:
        raise ValueError("need at least two training points")
    if X.shape[0] > PAIR_SUBSAMPLE:
        rng = np.random.default_rng(0) if rng is None else rng
        X = X[rng.choice(X.shape[0], PAIR_SUBSAMPLE, replace=False)]
    D = dissimilarity.pairwise(X, X)
    d = D[~np.eye(D.shape[0], dtype=bool)]
    d = d[np.isfinite(d) & (d > 0)]
    if d.size == 0:
        return np.array([1.0])
    med = float(np.median(d))
    lo, hi = med / math.log(1e4), med / -math.log(0.99)
    return np.geomspace(lo, hi, grid_size)


def select_h(report_or_grid, lam: float | None = None, delta: float | None = None, C1=None, C2=None, C3=None):
    """Feasible minimizer of ``C2 + lam * C3``; ties go to the larger bandwidth.

    Accepts a :class:`TuneReport` or a grid plus ``C1``, ``C2``, ``C3`` arrays.
    Returns ``(h, infeasible)``; without a feasible bandwidth the one with the
    smallest ``C1`` is returned and ``infeasible`` is True.
    """
    if isinstance(report_or_grid, TuneReport):
        r = report_or_grid
        grid, C1, C2, C3 = r.h_grid, r.C1, r.C2, r.C3
        lam = r.lam if lam is None else lam
        delta = r.delta if delta is None else delta
    else:
        grid = report_or_grid
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("bandwidth grid is empty")
    lam = 1.0 if lam is None else lam
    delta = 0.05 if delta is None else delta
    C1, C2, C3 = (np.asarray(c, dtype=float) for c in (C1, C2, C3))
    feasible = C1 <= delta
    if not feasible.any():
        best = np.flatnonzero(C1 == C1.min())
        return float(grid[best[-1]]), True
    obj = np.where(feasible, C2 + lam * C3, np.inf)
    m = obj.min()
    ties = np.flatnonzero(obj <= m + 1e-12 * max(1.0, abs(m)))
    return float(grid[ties[-1]]), False


class ObjectiveEstimator:
    """Shared-randomness estimator of ``(C1, C2, C3)`` over bandwidths.

    Parameters
    ----------
    cv_scores : (n0,) cross-validated training scores.
    distances : (n0, n0) dissimilarity matrix of the training features.
    n_calib : calibration-set size the bandwidth is tuned for.
    scale : (n0,) per-point length scale (``rho``), ones by default.
    """

    def __init__(self, cv_scores, distances, n_calib: int, config: TuneConfig, scale=None):
        self.scores = np.asarray(cv_scores, dtype=float)
        self.D = np.asarray(distances, dtype=float)
        n0 = self.scores.size
        self.scale = np.ones(n0) if scale is None else np.asarray(scale, dtype=float)
        self.n_calib = int(n_calib)
        self.alpha = config.alpha
        cap = n_calib + 1 if config.subsample_cap is None else config.subsample_cap
        self.ntil = min(cap, n0)
        if self.ntil < 2:
            raise ValueError("subsample must hold at least two points")
        rng = np.random.default_rng(config.seed)
        repeats = min(math.ceil(n0 / self.ntil), config.max_repeats)
        self.subsets = [self._by_score(rng.choice(n0, self.ntil, replace=False)) for _ in range(repeats)]
        self.resamples = [self._by_score(rng.integers(0, n0, self.n_calib)) for _ in range(config.B)]

    def _by_score(self, idx):
        return idx[np.argsort(self.scores[idx], kind="stable")]

    def _loo_lengths(self, S, h):
        """Scaled length for each point of ``S`` calibrated on the rest."""
        s = self.scores[S]
        m = s.size
        n = m - 1
        H = np.exp(-self.D[np.ix_(S, S)] / h)
        ell_s = np.searchsorted(s, s, side="left")
        cum = np.cumsum(H, axis=1)
        cq = np.where(ell_s > 0, cum[np.arange(m), np.maximum(ell_s - 1, 0)], 0.0)
        rs = cum[:, -1]
        keep = ~np.eye(m, dtype=bool)
        # row t: test point t; columns: the other points in score order
        above = (s[:, None] < s[None, :])[keep].reshape(m, n)
        H_cal_test = H.T[keep].reshape(m, n)  # H[j, t]
        H_test_cal = H[keep].reshape(m, n)  # H[t, j]
        cq_l = np.broadcast_to(cq, (m, m))[keep].reshape(m, n) - H_cal_test * above
        rs_l = np.broadcast_to(rs, (m, m))[keep].reshape(m, n)
        theta = cq_l / rs_l
        theta_plus = (cq_l + H_cal_test) / rs_l
        test_cum = np.zeros((m, n + 1))
        np.cumsum(H_test_cal, axis=1, out=test_cum[:, 1:])
        test_cum /= test_cum[:, -1:] + 1.0
        ell = np.empty((m, n + 1), dtype=np.int64)
        ell[:, :n] = np.broadcast_to(ell_s, (m, m))[keep].reshape(m, n) - above
        ell[:, n] = n
        tt = np.take_along_axis(test_cum, ell, axis=1)
        k = _scan.batch_kstar(
            theta, theta_plus, tt, ell, False, self.alpha * (n + 1), False, np.zeros(m)
        )
        s_rest = np.broadcast_to(s, (m, m))[keep].reshape(m, n)
        thr = np.full(m, np.inf)
        fin = k <= n
        thr[fin] = s_rest[fin, k[fin] - 1]
        return np.where(fin, self.scale[S] * thr, np.inf)

    def _resample_lengths(self, r, h):
        """Scaled length at every training point with calibration set ``r``."""
        s = self.scores[r]
        n = s.size
        ell = np.append(np.searchsorted(s, s, side="left"), n).astype(np.int64)
        cum = np.cumsum(np.exp(-self.D[np.ix_(r, r)] / h), axis=1)
        cq = np.where(ell[:n] > 0, cum[np.arange(n), np.maximum(ell[:n] - 1, 0)], 0.0)
        rs = cum[:, -1]
        n0 = self.scores.size
        out = np.empty(n0)
        sentinel = np.append(s, np.inf)
        step = max(1, BLOCK_ENTRIES // n)
        for start in range(0, n0, step):
            rows = slice(start, min(start + step, n0))
            h_test = np.exp(-self.D[rows][:, r] / h)
            theta, theta_plus, test_cum = _scan_vectors(cq, rs, h_test, h_test)
            tt = test_cum[:, ell]
            k = _scan.batch_kstar(
                theta, theta_plus, tt, ell[None, :], True, self.alpha * (n + 1), False,
                np.zeros(theta.shape[0]),
            )
            out[rows] = self.scale[rows] * sentinel[k - 1]
        return out

    def __call__(self, h: float):
        """``(C1, C2, C3, no_finite)`` at bandwidth ``h``."""
        L = np.concatenate([self._loo_lengths(S, h) for S in self.subsets])
        finite = np.isfinite(L)
        C1 = 1.0 - finite.mean()
        C2 = float(L[finite].sum() / max(finite.sum(), 1))
        Lb = np.stack([self._resample_lengths(r, h) for r in self.resamples], axis=1)
        fb = np.isfinite(Lb)
        cnt = fb.sum(axis=1)
        Lz = np.where(fb, Lb, 0.0)
        mu = Lz.sum(axis=1) / np.maximum(cnt, 1)
        s_i = (np.where(fb, Lb - mu[:, None], 0.0) ** 2).sum(axis=1) / np.maximum(cnt, 1)
        total = cnt.sum()
        C3 = float(math.sqrt((cnt * s_i).sum() / total)) if total else 0.0
        return float(C1), C2, C3, not finite.any()


def estimate_objective(train_cv_scores, features, dissimilarity, h: float, config: TuneConfig, n_calib: int, scale=None):
    """``(C1, C2, C3)`` at a single bandwidth."""
    X = as_features(features)
    est = ObjectiveEstimator(train_cv_scores, dissimilarity.pairwise(X, X), n_calib, config, scale)
    return est(h)[:3]


def tune_bandwidth(train_cv_scores, features, dissimilarity, n_calib: int, config: TuneConfig = TuneConfig(), scale=None) -> TuneReport:
    """Evaluate the grid and select ``h``."""
    X = as_features(features)
    grid = (
        auto_grid(dissimilarity, X, config.grid_size, np.random.default_rng(config.seed))
        if config.h_grid == "auto"
        else np.asarray(config.h_grid, dtype=float)
    )
    est = ObjectiveEstimator(train_cv_scores, dissimilarity.pairwise(X, X), n_calib, config, scale)
    C = np.array([est(h) for h in grid], dtype=float)
    no_finite = C[:, 3].astype(bool)
    if no_finite.any():
        logger.info("no finite bands at %d bandwidths", int(no_finite.sum()))
    h, infeasible = select_h(grid, config.lam, config.delta, C[:, 0], C[:, 1], C[:, 2])
    if infeasible:
        logger.warning("no bandwidth meets the infinite-band budget %.3f", config.delta)
    return TuneReport(grid, C[:, 0], C[:, 1], C[:, 2], h, config.lam, config.delta, infeasible, no_finite)
