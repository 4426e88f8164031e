import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from invariants import property_test
from strategies import weighted_dists

from lcp.wdist import (
    TOL,
    RowQuantiles,
    WeightedDist,
    le,
    lt,
    membership_equivalent,
    quantile,
    replace_last_with_infinity,
)

levels = st.floats(0.0, 1.0, allow_nan=False)


def test_quantile_left_inverse_examples():
    d = WeightedDist([1.0, 2.0, 3.0], [0.2, 0.3, 0.5])
    assert quantile(d, 0.2) == 1.0
    assert quantile(d, 0.2 + 1e-9) == 2.0
    assert quantile(d, 0.5) == 2.0
    assert quantile(d, 1.0) == 3.0
    assert quantile(d, 0.0) == -np.inf


def test_quantile_hits_infinite_atom():
    d = WeightedDist([1.0, np.inf], [0.6, 0.4])
    assert quantile(d, 0.6) == 1.0
    assert quantile(d, 0.61) == np.inf


def test_level_from_summed_weights_recovered_despite_roundoff():
    w = np.full(10, 0.1)
    d = WeightedDist(np.arange(10.0), w)
    assert quantile(d, float(np.sum(w[:3]))) == 2.0
    assert quantile(d, 0.1 + 0.2) == 2.0


def test_tolerance_helpers():
    assert not lt(1.0, 1.0 + TOL / 2)
    assert lt(1.0, 1.0 + 2 * TOL)
    assert le(1.0 + TOL / 2, 1.0)
    assert not le(1.0 + 2 * TOL, 1.0)


@pytest.mark.parametrize(
    "values, w",
    [([1.0], [0.5]), ([1.0, 2.0], [1.0]), ([np.nan], [1.0]), ([-np.inf], [1.0]), ([1.0, 2.0], [-0.5, 1.5])],
)
def test_invalid_distributions_rejected(values, w):
    with pytest.raises(ValueError):
        WeightedDist(values, w)


def test_level_out_of_range():
    with pytest.raises(ValueError):
        quantile(WeightedDist([1.0], [1.0]), 1.5)


def test_replace_keeps_weights():
    d = WeightedDist([3.0, 1.0, 2.0], [0.2, 0.3, 0.5], test_index=0)
    e = replace_last_with_infinity(d)
    assert e.test_value == np.inf
    assert e.weights[e.test_index] == pytest.approx(0.2)
    assert quantile(e, 0.8) == 2.0 and quantile(e, 0.81) == np.inf


def test_membership_rejects_mismatched_laws():
    a = WeightedDist([1.0, 2.0], [0.5, 0.5], test_index=1)
    b = WeightedDist([1.5, np.inf], [0.5, 0.5], test_index=1)
    with pytest.raises(ValueError):
        membership_equivalent(2.0, a, b, 0.5)


test_membership_same_under_test_at_v_or_infinity = property_test("membership at v equals membership at infinity", 500)
test_quantile_monotone_in_level = property_test("quantile nondecreasing in level", 500)
test_quantile_monotone_in_test_value = property_test("quantile nondecreasing in test value", 500)


@settings(max_examples=500, deadline=None)
@given(st.lists(weighted_dists(6), min_size=1, max_size=4), levels)
def test_row_quantiles_match_single_rows(rows, level):
    n = min(len(v) for v, _ in rows)
    values = rows[0][0][:n]
    W = np.array([w[:n] / w[:n].sum() if w[:n].sum() > 0 else np.full(n, 1 / n) for _, w in rows])
    rq = RowQuantiles(values, W).at(level)
    for r in range(len(rows)):
        assert rq[r] == quantile(WeightedDist(values, W[r]), level)
