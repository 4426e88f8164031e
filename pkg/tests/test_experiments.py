import numpy as np
import pytest

from lcp.harness.experiments import (
    EIGHT,
    LocalizerConfig,
    Method,
    binned_coverage,
    bench,
    coverage_se,
    marginal_coverage_mc,
    oracle_check,
    prop1_experiment,
    prop2_experiment,
    run_experiment,
)
from lcp.harness.generators import SyntheticSpec

SMALL = SyntheticSpec("ex1A", n_train=200, n_calib=200, n_test=400, seed=3)


def test_method_parsing():
    assert Method.parse("LCLQR") == Method("LCP", "QR-local")
    assert Method.parse("naive:R").label == "naive:R"
    assert Method.parse("CR").label == "CR" and not Method.parse("CR").localized
    for bad in ("XYZ", "LCP:foo", "bogus:R"):
        with pytest.raises(ValueError):
            Method.parse(bad)


def test_localizer_config_validation():
    with pytest.raises(ValueError):
        LocalizerConfig("manhattan")
    with pytest.raises(ValueError):
        LocalizerConfig(h=-1.0)


def test_coverage_se():
    assert coverage_se(0.9, 100) == pytest.approx(0.03)
    assert coverage_se(0.9, 100, 98) == pytest.approx(np.sqrt(0.09 / 100 + 0.09 / 100))


def test_run_experiment_report_shape():
    rep = run_experiment(SMALL, ["CR", "LCR", "LCP-randomized:R", "naive:R"], LocalizerConfig("euclidean", 0.3), 0.9)
    assert list(rep.results) == ["CR", "LCR", "LCP-randomized:R", "naive:R"]
    common = rep.common_finite()
    for r in rep.results.values():
        assert 0 <= r.coverage <= 1
        assert r.lower.shape == (400,)
        assert np.all(r.finite[common])
    cr = rep.results["CR"]
    assert np.all(np.isfinite(cr.threshold)) and len(np.unique(cr.threshold)) == 1
    assert rep.results["LCR"].h == 0.3
    rows = rep.table()
    assert rows[0]["metric"] == "coverage" and set(rows[0]) == {"metric", *rep.results}


def test_ave_pi0_uses_common_subset():
    rep = run_experiment(SMALL, ["CR", "LCR"], LocalizerConfig("euclidean", 0.02), 0.9)
    common = rep.common_finite()
    lcr = rep.results["LCR"]
    assert lcr.infinite_frac > 0
    assert lcr.ave_pi0 == pytest.approx(np.mean((lcr.upper - lcr.lower)[common]))


def test_run_experiment_deterministic():
    a = run_experiment(SMALL, ["LCR"], LocalizerConfig("euclidean", 0.3), 0.9, seed=4)
    b = run_experiment(SMALL, ["LCR"], LocalizerConfig("euclidean", 0.3), 0.9, seed=4)
    np.testing.assert_array_equal(a.results["LCR"].upper, b.results["LCR"].upper)


def test_run_experiment_requires_methods():
    with pytest.raises(ValueError):
        run_experiment(SMALL, [], LocalizerConfig("euclidean", 0.3))


def test_eight_methods_listed():
    assert EIGHT == ("CR", "LCR", "CLR", "LCLR", "CQR", "LCQR", "CLQR", "LCLQR")


def test_binned_coverage_drops_empty_bins(caplog):
    x = np.array([0.0, 0.1, 2.0])
    cur = binned_coverage(x, np.array([1.0, 0.5, 0.2]), [0.0, 1.0, 2.0], 0.4)
    np.testing.assert_array_equal(cur.centers, [0.0, 2.0])
    np.testing.assert_allclose(cur.coverage, [0.75, 0.2])
    assert "dropped" in caplog.text


def test_small_monte_carlo_drivers():
    cov, se = marginal_coverage_mc(n=30, reps=300, alpha=0.8, seed=1)
    assert abs(cov - 0.8) < 4 * se + 0.03
    res = prop1_experiment(reps=100, seed=2)
    assert 0 <= res["naive_infinite_frac"] <= 1 and 0.5 < res["eps"] <= 1
    res = prop2_experiment(p=1, n=300, reps=20, tests_per_rep=5, seed=3)
    assert 0 <= res["naive_coverage"] <= 1


def test_oracle_check_small():
    res = oracle_check(40, 15, seed=9, randomized=True)
    assert res.ok and res.instances == 40


def test_bench_rows():
    rows = bench((200, 400), n_test=3, repeats=1)
    assert [r["n"] for r in rows] == [200, 400]
    assert all(r["scan_seconds"] > 0 for r in rows)
