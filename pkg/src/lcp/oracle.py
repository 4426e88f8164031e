"""Brute-force split-LCP reference built directly on weighted quantiles.

For a candidate test score ``v`` every row distribution ``F_i(v)`` is
materialized, the smallest adjusted level whose average coverage indicator
reaches ``alpha`` is found by bisection over all row prefix sums, and ``v`` is
accepted when it lies below the test-centered quantile at that level.  Costs
are cubic in ``n``; intended for ``n`` up to a few hundred.
"""

from __future__ import annotations

import numpy as np

from .engine import CalibrationSet, PredictionBand
from .localizer import WeightTable
from .wdist import RowQuantiles, WeightedDist, quantile

SIZE_CAP = 200
COUNT_TOL = 1e-9


def _check_size(calib: CalibrationSet):
    if calib.n > SIZE_CAP:
        raise ValueError(f"oracle limited to n <= {SIZE_CAP}, got {calib.n}")


def _levels(P: np.ndarray, values: np.ndarray, alpha: float):
    """Smallest satisfying level, its predecessor and both coverage counts."""
    n1 = values.size
    target = alpha * n1
    rq = RowQuantiles(values, P)
    cands = np.minimum(rq.candidate_levels(), 1.0)

    def count(level):
        return int(np.sum(values <= rq.at(level)))

    lo, hi = 0, cands.size - 1
    if count(cands[hi]) < target - COUNT_TOL:
        raise AssertionError("full level must satisfy the coverage condition")
    while lo < hi:
        mid = (lo + hi) // 2
        if count(cands[mid]) >= target - COUNT_TOL:
            hi = mid
        else:
            lo = mid + 1
    upper = float(cands[lo])
    lower = float(cands[lo - 1]) if lo > 0 else 0.0
    return upper, lower, count(upper), count(lower)


def _setup(calib: CalibrationSet, weights: WeightTable, v: float):
    P = weights.normalized_rows()
    values = np.append(calib.scores, v)
    return P, values


def alpha_tilde_oracle(calib: CalibrationSet, weights: WeightTable, v: float, alpha: float) -> float:
    """Smallest level whose average row-coverage indicator at test score ``v`` reaches ``alpha``."""
    _check_size(calib)
    P, values = _setup(calib, weights, v)
    return _levels(P, values, alpha)[0]


def coverage_fraction(calib: CalibrationSet, weights: WeightTable, v: float, level: float) -> float:
    """Fraction of the ``n+1`` rows whose own score is within their level quantile."""
    P, values = _setup(calib, weights, v)
    return float(np.mean(values <= RowQuantiles(values, P).at(level)))


def candidate_scores(scores: np.ndarray) -> np.ndarray:
    """Distinct scores, midpoints between them, and one point beyond each end."""
    u = np.unique(scores)
    mids = (u[1:] + u[:-1]) / 2
    return np.sort(np.concatenate([u, mids, [u[0] - 1.0, u[-1] + 1.0]]))


def oracle_acceptance(calib: CalibrationSet, weights: WeightTable, alpha: float, draw=None):
    """``(candidates, accepted)`` over :func:`candidate_scores`.

    With ``draw`` in ``[0, 1]`` the randomized rule is used: the smallest
    satisfying level is kept with probability ``(alpha - a2) / (a1 - a2)``,
    otherwise its predecessor (or 0) is used.
    """
    _check_size(calib)
    cands = candidate_scores(calib.scores)
    P = weights.normalized_rows()
    n = calib.n
    # the test-centered law holds its own atom at +inf, so it does not move with v
    dist = WeightedDist(np.append(calib.scores, np.inf), P[n], test_index=n)
    accepted = np.zeros(cands.size, dtype=bool)
    for idx, v in enumerate(cands):
        values = np.append(calib.scores, v)
        upper, lower, c_up, c_low = _levels(P, values, alpha)
        level = upper
        if draw is not None:
            prob = (alpha * (n + 1) - c_low) / (c_up - c_low)
            level = upper if draw < prob else lower
        accepted[idx] = v <= quantile(dist, level)
    return cands, accepted


def _band_from_acceptance(calib: CalibrationSet, cands, accepted, draw=None) -> PredictionBand:
    scores = calib.scores
    if not accepted.any():
        return PredictionBand(0, -np.inf, 0.0, draw)
    top = cands[np.flatnonzero(accepted)[-1]]
    if top > scores[-1]:
        k = calib.n + 1
    else:
        nearest = scores[np.searchsorted(scores, top, side="left")]
        k = int(np.searchsorted(scores, nearest, side="right"))
    return PredictionBand(k, calib.threshold(k), float("nan"), draw)


def split_lcp_oracle(calib: CalibrationSet, weights: WeightTable, alpha: float) -> PredictionBand:
    """Threshold from scanning candidate test scores (``alpha_tilde`` left as NaN)."""
    cands, accepted = oracle_acceptance(calib, weights, alpha)
    return _band_from_acceptance(calib, cands, accepted)


def randomized_oracle(calib: CalibrationSet, weights: WeightTable, alpha: float, draw: float) -> PredictionBand:
    cands, accepted = oracle_acceptance(calib, weights, alpha, draw)
    return _band_from_acceptance(calib, cands, accepted, draw)
