"""Compiled single-scan kernels for the fast LCP threshold.

Inputs are per test point (one row each):

* ``theta[i]``       cumulative weight of row i strictly below V_i, test atom excluded
* ``theta_plus[i]``  the same with the test atom's weight added
* ``theta_tilde[k]`` cumulative test-row weight strictly below V_k, k = 1..n+1
* ``ell[k]``         number of calibration scores strictly below V_k

Index ``k`` is stored 0-based (``k - 1``).  Comparisons use the same absolute
tolerance as :mod:`lcp.wdist`.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .wdist import TOL

COUNT_TOL = 1e-9


@njit(cache=True)
def _lt(a, b):
    return a < b - TOL


@njit(cache=True)
def _le(a, b):
    return a <= b + TOL


@njit(cache=True)
def _cmp(a, b, strict):
    if strict:
        return _lt(a, b)
    return _le(a, b)


@njit(cache=True)
def _bucket_starts(theta_tilde, nb):
    """``starts[b]`` = first k with ``theta_tilde[k] >= b / nb``, b = 0..nb."""
    m = theta_tilde.shape[0]
    starts = np.empty(nb + 1, dtype=np.int32)
    k = 0
    for b in range(nb + 1):
        while k < m and theta_tilde[k] * nb < b:
            k += 1
        starts[b] = k
    return starts


@njit(cache=True)
def _switch_on(theta_tilde, starts, nb, x, strict):
    """Smallest k with ``x < theta_tilde[k]`` (``<=`` if not strict), else len.

    The bucket of ``x`` bounds the search range; one neighbouring bucket on
    each side absorbs the tolerance, and bisection inside decides exactly.
    """
    b = int(x * nb)
    b = min(max(b, 0), nb - 1)
    lo = starts[max(b - 1, 0)]
    hi = starts[b + 2] if b + 2 <= nb else theta_tilde.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if _cmp(x, theta_tilde[mid], strict):
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def scan_counts(theta, theta_plus, theta_tilde, ell, strict):
    """``count[k] = #{i : c_i(k) < theta_tilde[k]}`` (``<=`` when not strict).

    Here ``c_i(k)`` is ``theta_plus[i]`` while V_i is not below the candidate
    score and ``theta[i]`` afterwards.  Each calibration point falls in one
    of three sets and, within its set, is counted from a switch-on index on:
    for the first two the first k where its fixed level drops below
    ``theta_tilde[k]`` (located by bisection, ``theta_tilde`` being
    nondecreasing), for the third the first k whose score exceeds V_i.
    A histogram of switch-on indices and one prefix sum give every count.
    """
    n = theta.shape[0]
    nb = n + 1
    starts = _bucket_starts(theta_tilde, nb)
    # int32 halves the cache footprint of the randomly addressed histogram
    on = np.zeros(n + 2, dtype=np.int32)
    by_ell = np.zeros(n + 2, dtype=np.int32)
    for i in range(n):
        tt = theta_tilde[i]
        if _cmp(theta_plus[i], tt, strict):
            on[_switch_on(theta_tilde, starts, nb, theta_plus[i], strict)] += 1
        elif not _cmp(theta[i], tt, strict):
            on[_switch_on(theta_tilde, starts, nb, theta[i], strict)] += 1
        else:
            by_ell[ell[i] + 1] += 1
    counts = np.empty(n + 1, dtype=np.int64)
    running = 0
    for l in range(1, n + 2):
        by_ell[l] += by_ell[l - 1]
    for k in range(n + 1):
        running += on[k]
        # by_ell[l] now counts third-set points with ell < l
        counts[k] = running + by_ell[ell[k]]
    return counts


@njit(cache=True)
def _below(count, target):
    # count / (n+1) < alpha, with target = alpha * (n+1)
    return count < target - COUNT_TOL


@njit(cache=True)
def kstar_deterministic(counts, target):
    """Largest 1-based k with ``counts[k-1] / (n+1) < alpha``."""
    for k in range(counts.shape[0] - 1, -1, -1):
        if _below(counts[k], target):
            return k + 1
    return 0


@njit(cache=True)
def kstar_randomized(strict_counts, loose_counts, target, u):
    """Largest accepted k under the randomized exact-coverage rule (0 if none).

    On the candidate interval of index k the test point's own cumulative
    weight is theta_tilde[k].  When it is the binding order statistic the
    interval is kept with probability (alpha - alpha_2) / (alpha_1 - alpha_2).
    """
    for k in range(strict_counts.shape[0] - 1, -1, -1):
        s = strict_counts[k]
        e = loose_counts[k] + 1
        if not _below(s, target):
            continue
        if _below(e, target):
            return k + 1
        prob = (target - s) / (e - s)
        if u < prob:
            return k + 1
    return 0


@njit(cache=True)
def batch_kstar(theta, theta_plus, theta_tilde, ell, shared_ell, target, randomized, draws):
    """k* for every row of a batch of test points."""
    T = theta.shape[0]
    out = np.empty(T, dtype=np.int64)
    for t in range(T):
        row_ell = ell[0] if shared_ell else ell[t]
        s = scan_counts(theta[t], theta_plus[t], theta_tilde[t], row_ell, True)
        if randomized:
            e = scan_counts(theta[t], theta_plus[t], theta_tilde[t], row_ell, False)
            out[t] = kstar_randomized(s, e, target, draws[t])
        else:
            out[t] = kstar_deterministic(s, target)
    return out
