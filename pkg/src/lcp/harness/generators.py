"""Synthetic data sets for the coverage experiments.

* ``intro``   X ~ U(-5, 5); Y = cos(pi X / 10) Z for |X| <= 4.5, else 2 Z
* ``ex1A-D``  X ~ N(0, 1); Y = rho(X) Z with rho = sin, cos, sqrt|x|, 1
* ``ex2A-D``  as ex1 with X ~ U(-2, 2)
* ``prop1``   X ~ U(0, 1), Y = Z; paired with a tiny bandwidth it isolates every point
* ``prop2``   X on {0, +-e_j}; Y ~ U(-1, 1) off the origin, Y = 0 at it

Z is standard normal throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

GENERATORS = (
    "intro", "ex1A", "ex1B", "ex1C", "ex1D", "ex2A", "ex2B", "ex2C", "ex2D", "prop1", "prop2",
)

SPREADS = {
    "A": np.sin,
    "B": np.cos,
    "C": lambda x: np.sqrt(np.abs(x)),
    "D": lambda x: np.ones_like(x),
}


@dataclass(frozen=True)
class SyntheticSpec:
    name: str
    n_train: int = 1000
    n_calib: int = 1000
    n_test: int = 5000
    seed: int = 0
    p: int = 1
    alpha: float = 0.95

    def __post_init__(self):
        if self.name not in GENERATORS:
            raise ValueError(f"unknown generator {self.name!r}; expected one of {GENERATORS}")
        if min(self.n_train, self.n_calib, self.n_test) <= 0:
            raise ValueError("sample sizes must be positive")
        if self.p < 1:
            raise ValueError("p must be at least 1")


@dataclass(frozen=True, eq=False)
class Split:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.y.size


def prop2_probabilities(p: int, alpha: float) -> tuple[float, float]:
    """``(q1, q0)``: mass of each nonzero support point and of the origin."""
    denom = 2 * p * (1 - alpha) + alpha
    return (1 - alpha) / denom, alpha / denom


def spread(name: str, x) -> np.ndarray:
    """Signed conditional scale of Y at ``x`` (Y = spread * Z)."""
    x = np.asarray(x, dtype=float)
    if name == "intro":
        return np.where(np.abs(x) <= 4.5, np.cos(np.pi * x / 10), 2.0)
    if name.startswith("ex"):
        return SPREADS[name[-1]](x)
    if name == "prop1":
        return np.ones_like(x)
    raise ValueError(f"{name!r} has no Gaussian spread")


def sample(spec: SyntheticSpec, size: int, rng: np.random.Generator) -> Split:
    name = spec.name
    if name == "prop2":
        q1, q0 = prop2_probabilities(spec.p, spec.alpha)
        probs = np.append(np.full(2 * spec.p, q1), q0)
        cell = rng.choice(2 * spec.p + 1, size=size, p=probs / probs.sum())
        X = np.zeros((size, spec.p))
        nz = cell < 2 * spec.p
        X[nz, cell[nz] % spec.p] = np.where(cell[nz] < spec.p, 1.0, -1.0)
        y = np.where(nz, rng.uniform(-1, 1, size), 0.0)
        return Split(X, y)
    if name == "intro":
        x = rng.uniform(-5, 5, size)
    elif name.startswith("ex1"):
        x = rng.normal(size=size)
    elif name.startswith("ex2"):
        x = rng.uniform(-2, 2, size)
    else:
        x = rng.uniform(0, 1, size)
    y = spread(name, x) * rng.normal(size=size)
    return Split(x.reshape(-1, 1), y)


def generate(spec: SyntheticSpec) -> tuple[Split, Split, Split]:
    """Independent train, calibration and test splits.

    Each split draws from its own child of ``SeedSequence(seed)``, in that
    order, so changing one size never shifts the others' streams.
    """
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3)]
    return (
        sample(spec, spec.n_train, streams[0]),
        sample(spec, spec.n_calib, streams[1]),
        sample(spec, spec.n_test, streams[2]),
    )


def conditional_coverage(name: str, x, lower, upper) -> np.ndarray:
    """``P(lower <= Y <= upper | X = x)`` under the Gaussian generators."""
    s = np.abs(spread(name, np.asarray(x, dtype=float).ravel()))
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = norm.cdf(upper / s) - norm.cdf(lower / s)
    # degenerate spread: Y = 0 exactly
    p = np.where(s == 0, ((lower <= 0) & (upper >= 0)).astype(float), p)
    return np.clip(np.where(lower > upper, 0.0, p), 0.0, 1.0)


def true_band(name: str, x, alpha: float):
    """Central ``alpha`` conditional band of Y given X = x."""
    half = np.abs(spread(name, x)) * norm.ppf((1 + alpha) / 2)
    return -half, half
