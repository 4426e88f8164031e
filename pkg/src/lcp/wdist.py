"""Weighted empirical distributions on the extended real line.

A :class:`WeightedDist` is a finite list of atoms ``(value, weight)`` with
nonnegative weights summing to one.  One atom may sit at ``+inf``; ``-inf`` is
never stored and only appears as the level-0 quantile.

Quantiles follow the left-inverse definition

    Q(level; F) = inf{t : F(t) >= level},

with cumulative weights compared against ``level - TOL`` so that levels built
from the same weights as the distribution (which is how conformal levels
arise) are recovered despite summation round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL = 1e-12
"""Absolute tolerance for comparisons between cumulative weights."""


def lt(a, b):
    """``a < b`` beyond the cumulative-weight tolerance."""
    return a < b - TOL


def le(a, b):
    """``a <= b`` up to the cumulative-weight tolerance."""
    return a <= b + TOL


@dataclass(frozen=True)
class WeightedDist:
    """Immutable weighted point-mass distribution.

    Atoms are kept sorted by value (``+inf`` last).  ``test_index`` optionally
    marks the position of a designated "test" atom so that it can later be
    replaced by ``+inf``.
    """

    values: np.ndarray
    weights: np.ndarray
    test_index: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if values.shape != weights.shape:
            raise ValueError("values and weights must have the same length")
        if values.size == 0:
            raise ValueError("a distribution needs at least one atom")
        if np.any(np.isnan(values)) or np.any(values == -np.inf):
            raise ValueError("atom values must be finite or +inf")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > TOL * max(1, values.size):
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        order = np.argsort(values, kind="stable")
        test_index = self.test_index
        if test_index is not None:
            if not 0 <= test_index < values.size:
                raise ValueError("test_index out of range")
            test_index = int(np.flatnonzero(order == test_index)[0])
        values = values[order]
        weights = weights[order]
        values.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "test_index", test_index)

    @classmethod
    def from_weights(cls, values, raw_weights, test_index=None):
        """Build from unnormalized nonnegative weights."""
        raw = np.asarray(raw_weights, dtype=float)
        total = raw.sum()
        if total <= 0:
            raise ValueError("total weight must be positive")
        return cls(values, raw / total, test_index)

    @property
    def test_value(self):
        if self.test_index is None:
            raise ValueError("distribution has no designated test atom")
        return float(self.values[self.test_index])

    def merged(self):
        """Return ``(distinct_values, cumulative_weights)`` after merging ties."""
        values = self.values
        cum = np.cumsum(self.weights)
        last = np.ones(values.size, dtype=bool)
        last[:-1] = values[1:] != values[:-1]
        return values[last], cum[last]

    def cdf(self, t):
        """P(T <= t)."""
        return float(self.weights[self.values <= t].sum())

    def with_test_value(self, v):
        """Copy with the test atom moved to value ``v``."""
        if self.test_index is None:
            raise ValueError("distribution has no designated test atom")
        values = self.values.copy()
        values[self.test_index] = v
        return WeightedDist(values, self.weights, self.test_index)


def quantile(dist: WeightedDist, level: float) -> float:
    """Level-``level`` quantile ``inf{t : F(t) >= level}``.

    Returns ``-inf`` when the level is (numerically) zero and ``+inf`` when
    the finite atoms carry less than ``level`` of the mass.
    """
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"level must lie in [0, 1], got {level!r}")
    if level <= TOL:
        return -np.inf
    values, cum = dist.merged()
    idx = np.searchsorted(cum, level - TOL, side="left")
    if idx >= values.size:
        # only reachable through round-off in the total mass
        return np.inf
    return float(values[idx])


def replace_last_with_infinity(dist: WeightedDist) -> WeightedDist:
    """Move the designated test atom to ``+inf``, keeping every weight."""
    return dist.with_test_value(np.inf)


def membership_equivalent(
    v: float, dist_with_v: WeightedDist, dist_with_inf: WeightedDist, level: float
) -> tuple[bool, bool]:
    """Evaluate ``v <= Q(level)`` under both the test-at-``v`` and test-at-inf laws.

    The two distributions must differ only in the test atom.  The returned
    booleans always agree.
    """
    if dist_with_v.test_index is None or dist_with_inf.test_index is None:
        raise ValueError("both distributions need a designated test atom")
    if dist_with_v.test_value != v or dist_with_inf.test_value != np.inf:
        raise ValueError("test atoms must hold v and +inf respectively")
    if not _same_apart_from_test(dist_with_v, dist_with_inf):
        raise ValueError("distributions differ outside the test atom")
    return (
        bool(v <= quantile(dist_with_v, level)),
        bool(v <= quantile(dist_with_inf, level)),
    )


def _same_apart_from_test(a: WeightedDist, b: WeightedDist) -> bool:
    if a.values.size != b.values.size:
        return False
    ia, ib = a.test_index, b.test_index
    if abs(a.weights[ia] - b.weights[ib]) > TOL:
        return False
    rest_a = sorted(zip(np.delete(a.values, ia), np.delete(a.weights, ia)))
    rest_b = sorted(zip(np.delete(b.values, ib), np.delete(b.weights, ib)))
    return all(
        va == vb and abs(wa - wb) <= TOL for (va, wa), (vb, wb) in zip(rest_a, rest_b)
    )


class RowQuantiles:
    """Quantiles of many weight rows sharing the same atom values.

    Row ``r`` is the distribution ``sum_j weights[r, j] * delta(values[j])``.
    Sorting and tie merging happen once, so evaluating every row at a new
    level costs a single vectorized comparison.
    """

    def __init__(self, values, weights):
        values = np.asarray(values, dtype=float)
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        order = np.argsort(values, kind="stable")
        sv = values[order]
        cum = np.cumsum(weights[:, order], axis=1)
        last = np.ones(sv.size, dtype=bool)
        last[:-1] = sv[1:] != sv[:-1]
        self.sorted_values = sv
        self.prefix = cum
        self.group_values = sv[last]
        self.group_cum = cum[:, last]

    def at(self, level: float) -> np.ndarray:
        """Quantile of every row at ``level``."""
        if level <= TOL:
            return np.full(self.group_cum.shape[0], -np.inf)
        hit = self.group_cum >= level - TOL
        idx = hit.argmax(axis=1)
        out = self.group_values[idx]
        return np.where(hit.any(axis=1), out, np.inf)

    def candidate_levels(self) -> np.ndarray:
        """All prefix sums of every row in value order, plus 0, sorted."""
        return np.unique(np.concatenate([[0.0], self.prefix.ravel()]))
