"""Structural invariants as plain checks plus the strategies that drive them.

:func:`property_test` turns one into a hypothesis test with a chosen
number of examples: the unit modules run a few hundred, the acceptance
suite runs ten thousand.
"""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from strategies import instances, tied_values, weighted_dists

from lcp.engine import LcpState, direct_counts
from lcp.oracle import oracle_acceptance
from lcp.wdist import WeightedDist, membership_equivalent, quantile, replace_last_with_infinity

levels = st.floats(0.0, 1.0, allow_nan=False)


def membership_same_at_v_or_infinity(dist, v, level):
    values, w = dist
    values = values.copy()
    values[-1] = v
    with_v = WeightedDist(values, w, test_index=len(values) - 1)
    a, b = membership_equivalent(v, with_v, replace_last_with_infinity(with_v), level)
    assert a == b


def quantile_monotone_in_level(dist, a, b):
    d = WeightedDist(*dist)
    lo, hi = sorted((a, b))
    assert quantile(d, lo) <= quantile(d, hi)


def quantile_monotone_in_test_value(dist, v1, v2, level):
    values, w = dist
    lo, hi = sorted((v1, v2))
    a, b = values.copy(), values.copy()
    a[-1], b[-1] = lo, hi
    assert quantile(WeightedDist(a, w), level) <= quantile(WeightedDist(b, w), level)


def accepted_scores_form_down_set(inst):
    _, calib, table, _, alpha = inst
    _, accepted = oracle_acceptance(calib, table, alpha)
    if accepted.any():
        assert accepted[: np.flatnonzero(accepted)[-1] + 1].all()


def scan_counts_monotone_from_zero(inst):
    _, calib, table, _, _ = inst
    state = LcpState.from_table(calib, table)
    for strict in (True, False):
        counts = state.counts(strict)
        if strict:
            assert counts[0] == 0
        assert np.all(np.diff(counts) >= 0)
        np.testing.assert_array_equal(counts, direct_counts(state, strict))


def weight_rows_normalized(inst):
    _, calib, table, _, _ = inst
    P = table.normalized_rows()
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(P >= 0) and np.all(P <= 1)
    H = np.diff(np.concatenate([np.zeros((calib.n, 1)), table.Q], axis=1), axis=1)
    np.testing.assert_allclose(np.diag(H), 1.0)
    assert table.test_row[-1] == 1.0


INVARIANTS = {
    "membership at v equals membership at infinity": (
        membership_same_at_v_or_infinity, (weighted_dists(), tied_values, levels)),
    "quantile nondecreasing in level": (quantile_monotone_in_level, (weighted_dists(), levels, levels)),
    "quantile nondecreasing in test value": (
        quantile_monotone_in_test_value, (weighted_dists(), tied_values, tied_values, levels)),
    "accepted scores form a down-set": (accepted_scores_form_down_set, (instances(max_n=6),)),
    "scan counts start at zero and never decrease": (
        scan_counts_monotone_from_zero, (instances(max_n=15, max_p=3),)),
    "weight rows normalized": (weight_rows_normalized, (instances(),)),
}


def property_test(name, max_examples):
    check, strategies = INVARIANTS[name]
    return settings(max_examples=max_examples, deadline=None)(given(*strategies)(check))
