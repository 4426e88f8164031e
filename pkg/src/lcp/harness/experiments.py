"""Experiment drivers: method runs, Monte Carlo coverage checks and timing."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import _scan
from ..engine import (
    CalibrationSet,
    LcpState,
    SplitLCP,
    naive_band,
    randomized_threshold,
    split_cp_threshold,
    split_lcp_fast,
)
from ..localizer import (
    Euclidean,
    HardBall,
    LocalizerSpec,
    WeightTable,
    composite_dissimilarity,
    cumulative_matrix,
)
from ..scores import FAMILIES, ScoreConfig, ScoreModel, fit_score_model, interval_length, invert_outputs
from ..oracle import randomized_oracle, split_lcp_oracle
from ..tuning import TuneConfig, TuneReport, tune_bandwidth
from .generators import SyntheticSpec, conditional_coverage, generate, prop2_probabilities, sample

logger = logging.getLogger(__name__)

PROCEDURES = ("CP", "LCP", "LCP-randomized", "naive")
ALIASES = {
    "CR": ("CP", "R"),
    "LCR": ("LCP", "R"),
    "CLR": ("CP", "R-local"),
    "LCLR": ("LCP", "R-local"),
    "CQR": ("CP", "QR"),
    "LCQR": ("LCP", "QR"),
    "CLQR": ("CP", "QR-local"),
    "LCLQR": ("LCP", "QR-local"),
}
EIGHT = tuple(ALIASES)
DISSIMILARITIES = ("composite", "euclidean", "hard_ball")


@dataclass(frozen=True)
class Method:
    procedure: str
    family: str

    def __post_init__(self):
        if self.procedure not in PROCEDURES:
            raise ValueError(f"unknown procedure {self.procedure!r}; expected one of {PROCEDURES}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown score family {self.family!r}; expected one of {FAMILIES}")

    @classmethod
    def parse(cls, text: str) -> "Method":
        """``"LCR"``-style alias or ``"PROCEDURE:FAMILY"``."""
        if text in ALIASES:
            return cls(*ALIASES[text])
        if ":" not in text:
            raise ValueError(f"cannot parse method {text!r}; use an alias or PROCEDURE:FAMILY")
        proc, fam = text.split(":", 1)
        return cls(proc, fam)

    @property
    def label(self) -> str:
        for alias, pair in ALIASES.items():
            if pair == (self.procedure, self.family):
                return alias
        return f"{self.procedure}:{self.family}"

    @property
    def localized(self) -> bool:
        return self.procedure != "CP"


@dataclass(frozen=True)
class LocalizerConfig:
    dissimilarity: str = "composite"
    h: float | str = "auto"
    p0: int = 1
    radius: float = 1.0

    def __post_init__(self):
        if self.dissimilarity not in DISSIMILARITIES:
            raise ValueError(f"unknown dissimilarity {self.dissimilarity!r}; expected one of {DISSIMILARITIES}")
        if self.h != "auto" and not (isinstance(self.h, (int, float)) and self.h > 0):
            raise ValueError("h must be a positive number or 'auto'")


def build_dissimilarity(cfg: LocalizerConfig, model: ScoreModel, seed: int = 0):
    if cfg.dissimilarity == "euclidean":
        return Euclidean()
    if cfg.dissimilarity == "hard_ball":
        return HardBall(cfg.radius)
    return composite_dissimilarity(
        model.base_spread, model.train_features, p0=cfg.p0, rng=np.random.default_rng(seed)
    )


def coverage_se(alpha: float, n_test: int, n_calib: int | None = None) -> float:
    """Standard error of one run's empirical coverage.

    With ``n_calib`` the calibration draw's own variability
    ``alpha (1 - alpha) / (n_calib + 2)`` is included.
    """
    var = alpha * (1 - alpha) / n_test
    if n_calib is not None:
        var += alpha * (1 - alpha) / (n_calib + 2)
    return math.sqrt(var)


@dataclass(eq=False)
class MethodResult:
    label: str
    coverage: float
    se: float
    infinite_frac: float
    ave_pi: float
    ave_pi0: float = float("nan")
    h: float | None = None
    tune: TuneReport | None = field(default=None, repr=False)
    lower: np.ndarray = field(default=None, repr=False)
    upper: np.ndarray = field(default=None, repr=False)
    threshold: np.ndarray = field(default=None, repr=False)
    k_star: np.ndarray = field(default=None, repr=False)
    alpha_tilde: np.ndarray = field(default=None, repr=False)

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.lower) & np.isfinite(self.upper)

    def summary(self) -> dict:
        return {
            "method": self.label,
            "coverage": self.coverage,
            "se": self.se,
            "infinite_frac": self.infinite_frac,
            "ave_pi": self.ave_pi,
            "ave_pi0": self.ave_pi0,
            "h": self.h,
        }


@dataclass(eq=False)
class RunReport:
    spec: SyntheticSpec
    alpha: float
    results: dict
    test_X: np.ndarray = field(repr=False, default=None)
    test_y: np.ndarray = field(repr=False, default=None)

    def common_finite(self) -> np.ndarray:
        masks = [r.finite for r in self.results.values()]
        return np.logical_and.reduce(masks) if masks else np.zeros(0, dtype=bool)

    def to_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "alpha": self.alpha,
            "methods": [r.summary() for r in self.results.values()],
        }

    def table(self) -> list[dict]:
        """Rows metric, then one column per method."""
        rows = []
        for metric in ("coverage", "se", "infinite_frac", "ave_pi", "ave_pi0", "h"):
            row = {"metric": metric}
            for label, r in self.results.items():
                row[label] = getattr(r, metric)
            rows.append(row)
        return rows


def _streams(seed: int, k: int):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def _summarize(label, y, lower, upper, alpha, n_calib, **extra) -> MethodResult:
    covered = (lower <= y) & (y <= upper)
    finite = np.isfinite(lower) & np.isfinite(upper)
    lengths = interval_length(lower, upper)
    return MethodResult(
        label=label,
        coverage=float(covered.mean()),
        se=coverage_se(alpha, y.size, n_calib),
        infinite_frac=float(1 - finite.mean()),
        ave_pi=float(lengths[finite].mean()) if finite.any() else float("nan"),
        lower=lower,
        upper=upper,
        **extra,
    )


def run_experiment(
    spec: SyntheticSpec,
    methods,
    localizer: LocalizerConfig = LocalizerConfig(),
    alpha: float = 0.9,
    seed: int | None = None,
    tune: TuneConfig | None = None,
    score_config: ScoreConfig | None = None,
) -> RunReport:
    """Fit scores on the training split, calibrate, and evaluate on the test split.

    ``seed`` (default ``spec.seed``) drives model fitting, tuning and the
    randomized rule through independent child streams; the data come from
    ``spec.seed``.  Scores, dissimilarities and tuned bandwidths are shared
    by all methods using the same score family.
    """
    methods = [m if isinstance(m, Method) else Method.parse(m) for m in methods]
    if not methods:
        raise ValueError("no methods requested")
    seed = spec.seed if seed is None else seed
    fit_seed, tune_seed, rand_seed = _streams(seed, 3)
    train, calib, test = generate(spec)
    score_config = score_config or ScoreConfig(alpha=alpha, seed=fit_seed % (2**31))
    models, localizers, tune_reports = {}, {}, {}
    results = {}
    for method in methods:
        fam = method.family
        if fam not in models:
            models[fam] = fit_score_model(fam, train.X, train.y, score_config)
        model = models[fam]
        v_cal = model.score(calib.X, calib.y)
        outputs = model.outputs(test.X)
        extra = {}
        if not method.localized:
            t = split_cp_threshold(v_cal, alpha)
            thr = np.full(len(test), t)
            extra.update(threshold=thr)
        else:
            if fam not in localizers:
                dis = build_dissimilarity(localizer, model, fit_seed)
                h, report = localizer.h, None
                if h == "auto":
                    cfg = tune or TuneConfig()
                    cfg = TuneConfig(**{**asdict(cfg), "alpha": alpha, "seed": tune_seed % (2**31)})
                    report = tune_bandwidth(
                        model.cv_scores, model.train_features, dis, len(calib), cfg, model.cv_scale
                    )
                    h = report.selected
                localizers[fam] = LocalizerSpec(dis, float(h))
                tune_reports[fam] = report
            spec_h = localizers[fam]
            lcp = SplitLCP(spec_h, CalibrationSet.build(v_cal, calib.X))
            rule = {"LCP": "lcp", "LCP-randomized": "randomized", "naive": "naive"}[method.procedure]
            batch = lcp.predict(test.X, alpha, rule=rule, rng=rand_seed)
            thr = batch.threshold
            extra.update(
                threshold=thr,
                k_star=batch.k_star,
                alpha_tilde=batch.alpha_tilde,
                h=spec_h.bandwidth,
                tune=tune_reports[fam],
            )
        lower, upper = invert_outputs(fam, thr, **outputs)
        results[method.label] = _summarize(method.label, test.y, lower, upper, alpha, len(calib), **extra)
    report = RunReport(spec, alpha, results, test.X, test.y)
    common = report.common_finite()
    for r in results.values():
        lengths = interval_length(r.lower, r.upper)
        r.ave_pi0 = float(lengths[common].mean()) if common.any() else float("nan")
    return report


@dataclass(frozen=True, eq=False)
class CoverageCurve:
    centers: np.ndarray
    coverage: np.ndarray
    counts: np.ndarray

    def max_deviation(self, alpha: float) -> float:
        return float(np.max(np.abs(self.coverage - alpha)))


def binned_coverage(x, prob, centers, width) -> CoverageCurve:
    """Average of per-point conditional coverage within ``|x - c| <= width/2``."""
    x = np.asarray(x, dtype=float).ravel()
    keep_c, cov, cnt = [], [], []
    for c in np.asarray(centers, dtype=float):
        inside = np.abs(x - c) <= width / 2
        if not inside.any():
            logger.warning("no test points near %.3f; bin dropped", c)
            continue
        keep_c.append(c)
        cov.append(float(np.mean(prob[inside])))
        cnt.append(int(inside.sum()))
    return CoverageCurve(np.array(keep_c), np.array(cov), np.array(cnt))


def conditional_coverage_curve(
    spec: SyntheticSpec, method, localizer: LocalizerConfig, alpha: float, centers, width: float, seed=None
) -> CoverageCurve:
    """Binned conditional coverage of one method on a 1-D Gaussian generator.

    Coverage at each test point is the exact conditional probability of its
    interval, so only the binning and the calibration draw add noise.
    """
    method = method if isinstance(method, Method) else Method.parse(method)
    report = run_experiment(spec, [method], localizer, alpha, seed)
    r = report.results[method.label]
    prob = conditional_coverage(spec.name, report.test_X[:, 0], r.lower, r.upper)
    return binned_coverage(report.test_X[:, 0], prob, centers, width)


def _heteroscedastic_scores(x, rng):
    return (1 + np.abs(x[:, 0])) * rng.normal(size=x.shape[0])


def marginal_coverage_mc(
    n: int = 100, reps: int = 10_000, alpha: float = 0.9, h: float = 0.5, rule: str = "lcp", seed: int = 0
):
    """Monte Carlo marginal coverage of split LCP on Gaussian scores.

    Each replicate draws ``n + 1`` points with X ~ N(0, 1) and
    V = (1 + |X|) Z, calibrates on the first ``n`` and checks the last.
    Returns ``(coverage, standard_error)``.
    """
    rng = np.random.default_rng(seed)
    spec = LocalizerSpec(Euclidean(), h)
    hits = np.empty(reps, dtype=bool)
    for r in range(reps):
        X = rng.normal(size=(n + 1, 1))
        V = _heteroscedastic_scores(X, rng)
        cal = CalibrationSet.build(V[:n], X[:n])
        H = spec.matrix(X, X)
        Hc = H[:n, :n][np.ix_(cal.order, cal.order)]
        table = WeightTable(np.cumsum(Hc, axis=1), H[:n, n][cal.order], H[n, :n][cal.order])
        state = LcpState.from_table(cal, table)
        if rule == "lcp":
            band = split_lcp_fast(cal, state, alpha)
        elif rule == "randomized":
            band = randomized_threshold(cal, state, alpha, float(rng.random()))
        else:
            band = naive_band(cal, state, alpha)
        hits[r] = V[n] <= band.threshold
    cov = float(hits.mean())
    return cov, math.sqrt(alpha * (1 - alpha) / reps)


def prop1_experiment(n: int = 100, alpha: float = 0.5, h: float = 0.003, reps: int = 4000, seed: int = 0) -> dict:
    """Isolated-test-point regime with X ~ U(0, 1) and a tiny bandwidth.

    ``eps`` is the probability that the test row's total kernel mass
    (self-weight included) stays below ``1 / (1 - alpha)``, estimated on draws
    independent of those used for the band fractions.
    """
    rng = np.random.default_rng(seed)
    spec = LocalizerSpec(Euclidean(), h)
    below = np.empty(reps, dtype=bool)
    naive_inf = np.empty(reps, dtype=bool)
    lcp_inf = np.empty(reps, dtype=bool)
    covered = np.empty(reps, dtype=bool)
    for r in range(reps):
        Xe = rng.uniform(0, 1, size=(n + 1, 1))
        below[r] = spec.matrix(Xe[n : n + 1], Xe).sum() < 1 / (1 - alpha)
        X = rng.uniform(0, 1, size=(n + 1, 1))
        V = rng.normal(size=n + 1)
        cal = CalibrationSet.build(V[:n], X[:n])
        state = SplitLCP(spec, cal).state(X[n])
        naive = naive_band(cal, state, alpha)
        lcp = split_lcp_fast(cal, state, alpha)
        naive_inf[r] = naive.infinite
        lcp_inf[r] = lcp.infinite
        covered[r] = V[n] <= naive.threshold
    eps = float(below.mean())
    inf_frac = float(naive_inf.mean())
    return {
        "eps": eps,
        "eps_se": math.sqrt(eps * (1 - eps) / reps),
        "naive_infinite_frac": inf_frac,
        "naive_infinite_se": math.sqrt(inf_frac * (1 - inf_frac) / reps),
        "lcp_infinite_frac": float(lcp_inf.mean()),
        "naive_coverage": float(covered.mean()),
    }


def prop2_experiment(
    p: int = 1, alpha: float = 0.95, n: int = 5000, reps: int = 2000, tests_per_rep: int = 1, seed: int = 0
) -> dict:
    """Discrete counterexample: naive vs adjusted level with a radius-1 hard ball.

    Score is ``|Y|``.  Coverage standard errors use replicate-level means.
    """
    rng = np.random.default_rng(seed)
    spec = SyntheticSpec("prop2", n_train=1, n_calib=n, n_test=tests_per_rep, p=p, alpha=alpha)
    loc = LocalizerSpec(HardBall(1.0), 1.0)
    naive_cov = np.empty(reps)
    lcp_cov = np.empty(reps)
    for r in range(reps):
        cal = sample(spec, n, rng)
        test = sample(spec, tests_per_rep, rng)
        model = SplitLCP(loc, CalibrationSet.build(np.abs(cal.y), cal.X))
        v = np.abs(test.y)
        naive_cov[r] = np.mean(v <= model.predict(test.X, alpha, rule="naive").threshold)
        lcp_cov[r] = np.mean(v <= model.predict(test.X, alpha, rule="lcp").threshold)
    q1, q0 = prop2_probabilities(p, alpha)
    return {
        "q0": q0,
        "naive_coverage": float(naive_cov.mean()),
        "naive_se": float(naive_cov.std(ddof=1) / math.sqrt(reps)),
        "lcp_coverage": float(lcp_cov.mean()),
        "lcp_se": float(lcp_cov.std(ddof=1) / math.sqrt(reps)),
    }


@dataclass(frozen=True)
class OracleCheck:
    instances: int
    mismatches: int
    randomized_mismatches: int
    seconds: float
    failures: tuple = ()

    @property
    def ok(self) -> bool:
        return self.mismatches == 0 and self.randomized_mismatches == 0


def random_instance(rng: np.random.Generator, max_n: int):
    """Random calibration set, exponential localizer, test point and level.

    Scores are often given duplicated or rounded values to force ties.
    """
    n = int(rng.integers(1, max_n + 1))
    p = int(rng.integers(1, 4))
    X = rng.normal(size=(n, p))
    if n > 2 and rng.random() < 0.2:
        X[rng.integers(0, n, n // 2)] = X[0]
    V = rng.normal(size=n)
    if n > 2 and rng.random() < 0.7:
        m = int(rng.integers(1, n))
        V[rng.choice(n, m)] = V[rng.choice(n, m)]
    if rng.random() < 0.3:
        V = np.round(V, 1)
    spec = LocalizerSpec(Euclidean(), float(np.exp(rng.uniform(-3, 2))))
    xt = rng.normal(size=p)
    alpha = float(rng.choice([0.5, 0.8, 0.9, 0.95, rng.uniform(0.05, 0.99)]))
    return spec, CalibrationSet.build(V, X), xt, alpha


def oracle_check(instances: int = 1000, max_n: int = 50, seed: int = 0, randomized: bool = False) -> OracleCheck:
    """Compare the batch scan against the brute-force reference on random instances.

    With ``randomized`` the randomized rule is checked too, reusing one
    uniform draw on both sides (roughly doubles the cost).
    """
    rng = np.random.default_rng(seed)
    bad = bad_r = 0
    failures = []
    t0 = time.perf_counter()
    for i in range(instances):
        spec, cal, xt, alpha = random_instance(rng, max_n)
        table = cumulative_matrix(spec, cal.features).with_test(spec, cal.features, xt)
        model = SplitLCP(spec, cal)
        fast = int(model.predict(xt[None, :], alpha).k_star[0])
        if fast != split_lcp_oracle(cal, table, alpha).k_star:
            bad += 1
            failures.append(("lcp", i))
        u = float(rng.random())
        if not randomized:
            continue
        fast_r = randomized_threshold(cal, model.state(xt), alpha, u).k_star
        if fast_r != randomized_oracle(cal, table, alpha, u).k_star:
            bad_r += 1
            failures.append(("randomized", i))
    return OracleCheck(instances, bad, bad_r, time.perf_counter() - t0, tuple(failures))


def bench(ns=(1000, 10_000, 100_000), n_test: int = 20, h: float = 0.5, seed: int = 0, repeats: int = 5) -> list[dict]:
    """Time the weight precompute and the per-point scan at each calibration size.

    Features are 1-D and rounded to a 0.01 grid so the calibration sums cost
    one kernel row per distinct value.  The scan is timed one test point at
    a time on prepared inputs; the median over points and repeats is
    reported, which is robust to scheduler noise.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for n in ns:
        X = np.round(rng.normal(size=(n, 1)), 2)
        V = _heteroscedastic_scores(X, rng)
        Xt = rng.normal(size=(n_test, 1))
        t0 = time.perf_counter()
        model = SplitLCP(LocalizerSpec(Euclidean(), h), CalibrationSet.build(V, X))
        t_weights = time.perf_counter() - t0
        t0 = time.perf_counter()
        _, theta, theta_plus, test_cum = next(model.scan_inputs(Xt))
        tt = test_cum[:, model.calib.ell]
        t_rows = (time.perf_counter() - t0) / n_test
        ell = model.calib.ell[None, :]
        target = 0.9 * (n + 1)
        zero = np.zeros(1)
        inputs = [(theta[t : t + 1].copy(), theta_plus[t : t + 1].copy(), tt[t : t + 1].copy()) for t in range(n_test)]
        _scan.batch_kstar(*inputs[0], ell, True, target, False, zero)
        times = []
        for _ in range(repeats):
            for a, b, c in inputs:
                t0 = time.perf_counter()
                _scan.batch_kstar(a, b, c, ell, True, target, False, zero)
                times.append(time.perf_counter() - t0)
        scan = float(np.median(times))
        rows.append(
            {
                "n": n,
                "weights_seconds": t_weights,
                "test_row_seconds": t_rows,
                "scan_seconds": scan,
                "end_to_end_seconds": t_rows + scan,
            }
        )
    return rows
