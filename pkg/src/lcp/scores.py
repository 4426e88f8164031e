"""Conformal score families, plug-in predictors and spread estimation.

Families:

* ``R``         ``|y - mu(x)|``
* ``R-local``   ``|y - mu(x)| / rho(x)``
* ``QR``        ``max(qlo(x) - y, y - qhi(x))``
* ``QR-local``  the QR score divided by ``rho(x)``

Any object with ``fit(X, y)`` and ``predict(X)`` can stand in for the
built-in k-NN learners.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from sklearn.model_selection import KFold
from sklearn.neighbors import KNeighborsRegressor, NearestNeighbors

from .localizer import as_features

logger = logging.getLogger(__name__)

FAMILIES = ("R", "R-local", "QR", "QR-local")
SPREAD_FLOOR = 1e-6


class NotFittedError(RuntimeError):
    pass


class Predictor(Protocol):
    def fit(self, X, y): ...

    def predict(self, X) -> np.ndarray: ...


def default_neighbors(n: int) -> int:
    return max(1, math.ceil(n**0.7))


def _select_k(make, X, y, loss, folds, seed):
    """Pick k from a small grid around the default by K-fold validation loss."""
    n = X.shape[0]
    base = default_neighbors(n)
    grid = sorted({max(1, int(round(base * f))) for f in (0.25, 0.5, 1.0, 1.5, 2.0)})
    cv = KFold(folds, shuffle=True, random_state=seed)
    best, best_loss = base, np.inf
    for k in grid:
        total = 0.0
        for tr, te in cv.split(X):
            kk = min(k, tr.size)
            total += loss(y[te], make(kk).fit(X[tr], y[tr]).predict(X[te]))
        if total < best_loss:
            best, best_loss = k, total
    return best


@dataclass
class KNNMean:
    """k-NN mean regressor; ``k=None`` uses ``ceil(n^0.7)``, ``k="cv"`` selects by 5-fold MSE."""

    k: int | str | None = None
    seed: int = 0
    _model: KNeighborsRegressor | None = field(default=None, repr=False)

    def fit(self, X, y):
        X, y = as_features(X), np.asarray(y, dtype=float)
        k = self.k
        if k == "cv":
            k = _select_k(
                lambda kk: KNNMean(kk), X, y, lambda a, b: float(np.sum((a - b) ** 2)), 5, self.seed
            )
        k = default_neighbors(len(y)) if k is None else min(int(k), len(y))
        self._model = KNeighborsRegressor(n_neighbors=k).fit(X, y)
        return self

    def predict(self, X):
        if self._model is None:
            raise NotFittedError("KNNMean is not fitted")
        return self._model.predict(as_features(X))


def _pinball(level):
    def loss(y, q):
        r = y - q
        return float(np.sum(np.maximum(level * r, (level - 1) * r)))

    return loss


@dataclass
class KNNQuantile:
    """Empirical ``level``-quantile of the k nearest training responses."""

    level: float
    k: int | str | None = None
    seed: int = 0
    _nn: NearestNeighbors | None = field(default=None, repr=False)
    _y: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError("quantile level must lie in (0, 1)")

    def fit(self, X, y):
        X, y = as_features(X), np.asarray(y, dtype=float)
        k = self.k
        if k == "cv":
            k = _select_k(
                lambda kk: KNNQuantile(self.level, kk), X, y, _pinball(self.level), 5, self.seed
            )
        k = default_neighbors(len(y)) if k is None else min(int(k), len(y))
        self._nn = NearestNeighbors(n_neighbors=k).fit(X)
        self._y = y.copy()
        return self

    def predict(self, X):
        if self._nn is None:
            raise NotFittedError("KNNQuantile is not fitted")
        idx = self._nn.kneighbors(as_features(X), return_distance=False)
        return np.quantile(self._y[idx], self.level, axis=1)


class KernelRegressor:
    """Gaussian Nadaraya-Watson smoother on standardized features.

    The bandwidth is picked by leave-one-out squared error over a grid of
    multiples of ``n^(-1/5)``.  Being smooth, its finite-difference Jacobian is
    informative, which is what the composite dissimilarity needs.
    """

    GRID = (0.1, 0.15, 0.25, 0.4, 0.6, 1.0, 1.6, 2.5, 4.0)
    MAX_SELECT = 2000

    def __init__(self, bandwidth: float | None = None, seed: int = 0):
        self.bandwidth = bandwidth
        self.seed = seed
        self._X = None

    def _scaled(self, X):
        return (as_features(X) - self._loc) / self._scale

    @staticmethod
    def _sqdist(A, B):
        d = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2 * A @ B.T
        return np.maximum(d, 0.0)

    def fit(self, X, y):
        X, y = as_features(X), np.asarray(y, dtype=float)
        self._loc = X.mean(axis=0)
        scale = X.std(axis=0)
        self._scale = np.where(scale > 0, scale, 1.0)
        Z = self._scaled(X)
        self._X, self._y = Z, y.copy()
        if self.bandwidth is None:
            self.bandwidth_ = self._loo_bandwidth(Z, y)
        else:
            self.bandwidth_ = float(self.bandwidth)
        return self

    def _loo_bandwidth(self, Z, y):
        n = Z.shape[0]
        if n > self.MAX_SELECT:
            pick = np.random.default_rng(self.seed).choice(n, self.MAX_SELECT, replace=False)
            Z, y = Z[pick], y[pick]
            n = self.MAX_SELECT
        D = self._sqdist(Z, Z)
        base = n ** (-1 / 5)
        best, best_err = base, np.inf
        for mult in self.GRID:
            h = mult * base
            W = np.exp(-D / (2 * h * h))
            np.fill_diagonal(W, 0.0)
            s = W.sum(1)
            ok = s > 1e-300
            pred = np.where(ok, (W @ y) / np.where(ok, s, 1.0), y.mean())
            err = float(np.mean((pred - y) ** 2))
            if err < best_err:
                best, best_err = h, err
        return best

    def predict(self, X):
        if self._X is None:
            raise NotFittedError("KernelRegressor is not fitted")
        Z = self._scaled(X)
        h = self.bandwidth_
        out = np.empty(Z.shape[0])
        step = max(1, (1 << 22) // self._X.shape[0])
        for s in range(0, Z.shape[0], step):
            D = self._sqdist(Z[s : s + step], self._X)
            # shift by the row minimum so far-away queries still get weights
            W = np.exp(-(D - D.min(axis=1, keepdims=True)) / (2 * h * h))
            out[s : s + step] = (W @ self._y) / W.sum(1)
        return out


@dataclass(frozen=True, eq=False)
class SpreadModel:
    """``rho(x) = max(exp(f(x)), floor)`` for a fitted log-spread regressor ``f``."""

    regressor: object
    floor: float

    def predict(self, X) -> np.ndarray:
        return np.maximum(np.exp(self.regressor.predict(as_features(X))), self.floor)

    def log_predict(self, X) -> np.ndarray:
        return np.log(self.predict(X))


class UnitSpread:
    """``rho = 1`` everywhere (non-local families)."""

    def predict(self, X):
        return np.ones(as_features(X).shape[0])

    def log_predict(self, X):
        return np.zeros(as_features(X).shape[0])


def fit_spread(cv_scores, features, predictor=None, folds: int = 5) -> SpreadModel | UnitSpread:
    """Regress ``log(|V| + mean|V|)`` on the features and exponentiate."""
    V = np.abs(np.asarray(cv_scores, dtype=float))
    X = as_features(features)
    if V.size < 2 * folds:
        raise ValueError(f"spread fitting needs at least {2 * folds} samples, got {V.size}")
    offset = V.mean()
    if offset <= 0:
        logger.warning("all cross-validated scores are zero; using unit spread")
        return UnitSpread()
    reg = KernelRegressor() if predictor is None else copy.deepcopy(predictor)
    reg.fit(X, np.log(V + offset))
    raw = np.exp(reg.predict(X))
    return SpreadModel(reg, SPREAD_FLOOR * float(raw.mean()))


@dataclass(frozen=True)
class ScoreConfig:
    """Options for :func:`fit_score_model`; ``alpha`` is the target coverage."""

    alpha: float = 0.9
    folds: int = 5
    k: int | str | None = None
    seed: int = 0


def quantile_levels(alpha: float) -> tuple[float, float]:
    """Lower/upper conditional quantile levels for a central ``alpha`` band."""
    return (1 - alpha) / 2, (1 + alpha) / 2


def _repair_crossing(qlo, qhi):
    crossed = qlo > qhi
    if np.any(crossed):
        logger.info("repaired %d crossing quantile predictions", int(crossed.sum()))
        return np.minimum(qlo, qhi), np.maximum(qlo, qhi)
    return qlo, qhi


def base_scores(family: str, y, mu=None, qlo=None, qhi=None) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if family.startswith("QR"):
        return np.maximum(qlo - y, y - qhi)
    return np.abs(y - mu)


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """A fitted score family with its predictors.

    ``cv_scores`` and ``cv_scale`` hold the cross-validated scores of this
    family on the training split and the per-point length scale, both used
    by bandwidth tuning.  ``base_spread`` is the spread of the unscaled score,
    which also feeds the composite dissimilarity.
    """

    family: str
    alpha: float
    mean: object = None
    lower: object = None
    upper: object = None
    spread: object = field(default_factory=UnitSpread)
    base_spread: object = None
    cv_scores: np.ndarray | None = None
    cv_scale: np.ndarray | None = None
    train_features: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown score family {self.family!r}; expected one of {FAMILIES}")

    @property
    def local(self) -> bool:
        return self.family.endswith("local")

    def outputs(self, X) -> dict:
        """Predictor outputs ``mu``/``qlo``/``qhi`` and ``rho`` at ``X``."""
        X = as_features(X)
        out = {"rho": self.spread.predict(X) if self.local else np.ones(X.shape[0])}
        if self.family.startswith("QR"):
            if self.lower is None or self.upper is None:
                raise NotFittedError("quantile predictors are missing")
            out["qlo"], out["qhi"] = _repair_crossing(self.lower.predict(X), self.upper.predict(X))
        else:
            if self.mean is None:
                raise NotFittedError("mean predictor is missing")
            out["mu"] = self.mean.predict(X)
        return out

    def score(self, X, y) -> np.ndarray:
        o = self.outputs(X)
        return score_from_outputs(self.family, y, **o)

    def invert(self, X, threshold):
        return invert_outputs(self.family, threshold, **self.outputs(X))


def score_from_outputs(family, y, mu=None, rho=None, qlo=None, qhi=None) -> np.ndarray:
    v = base_scores(family, y, mu=mu, qlo=qlo, qhi=qhi)
    if family.endswith("local"):
        v = v / rho
    return v


def invert_outputs(family, threshold, mu=None, rho=None, qlo=None, qhi=None):
    """``(lower, upper)`` of ``{y : score <= threshold}``; empty when lower > upper."""
    t = np.asarray(threshold, dtype=float)
    rho = 1.0 if rho is None or not family.endswith("local") else np.asarray(rho, dtype=float)
    with np.errstate(invalid="ignore"):
        half = np.where(np.isinf(t), t, rho * t)
    if family.startswith("QR"):
        lo, hi = np.asarray(qlo, dtype=float) - half, np.asarray(qhi, dtype=float) + half
    else:
        mu = np.asarray(mu, dtype=float)
        lo, hi = mu - half, mu + half
    return lo, hi


def score(model: ScoreModel, x, y):
    return model.score(as_features(x), np.atleast_1d(y))


def invert(model: ScoreModel, x, threshold):
    return model.invert(as_features(x), np.atleast_1d(threshold))


def interval_length(lower, upper) -> np.ndarray:
    return np.maximum(np.asarray(upper) - np.asarray(lower), 0.0)


def _fit_base(family, X, y, cfg: ScoreConfig):
    if family.startswith("QR"):
        lo_level, hi_level = quantile_levels(cfg.alpha)
        return (
            KNNQuantile(lo_level, cfg.k, cfg.seed).fit(X, y),
            KNNQuantile(hi_level, cfg.k, cfg.seed).fit(X, y),
        )
    return (KNNMean(cfg.k, cfg.seed).fit(X, y),)


def _base_cv_scores(family, X, y, models):
    if family.startswith("QR"):
        qlo, qhi = _repair_crossing(models[0].predict(X), models[1].predict(X))
        return base_scores(family, y, qlo=qlo, qhi=qhi)
    return base_scores(family, y, mu=models[0].predict(X))


def fit_score_model(family: str, X, y, config: ScoreConfig = ScoreConfig()) -> ScoreModel:
    """Fit a score family on the training split with K-fold cross-validated scores."""
    if family not in FAMILIES:
        raise ValueError(f"unknown score family {family!r}; expected one of {FAMILIES}")
    X, y = as_features(X), np.asarray(y, dtype=float)
    if X.shape[0] < 2 * config.folds:
        raise ValueError(f"need at least {2 * config.folds} training points")
    folds = list(KFold(config.folds, shuffle=True, random_state=config.seed).split(X))
    base_cv = np.empty(y.size)
    for tr, te in folds:
        base_cv[te] = _base_cv_scores(family, X[te], y[te], _fit_base(family, X[tr], y[tr], config))
    models = _fit_base(family, X, y, config)
    base_spread = fit_spread(base_cv, X, folds=config.folds)
    cv_scores, cv_scale, spread = base_cv, np.ones(y.size), UnitSpread()
    if family.endswith("local"):
        spread = base_spread
        cv_scale = np.empty(y.size)
        for tr, te in folds:
            cv_scale[te] = fit_spread(base_cv[tr], X[tr], folds=config.folds).predict(X[te])
        cv_scores = base_cv / cv_scale
    kwargs = {"mean": models[0]} if len(models) == 1 else {"lower": models[0], "upper": models[1]}
    return ScoreModel(
        family,
        config.alpha,
        spread=spread,
        base_spread=base_spread,
        cv_scores=cv_scores,
        cv_scale=cv_scale,
        train_features=X,
        **kwargs,
    )
