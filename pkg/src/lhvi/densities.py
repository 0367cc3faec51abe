"""Univariate marginals that can be evaluated pointwise: mixtures, grids, masses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

_LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class GaussianMixture1D:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        for name in ("weights", "means", "stds"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not (self.weights.shape == self.means.shape == self.stds.shape):
            raise ValueError("weights, means and stds must have equal length")
        if np.any(self.stds <= 0):
            raise ValueError("component stds must be positive")

    @classmethod
    def normal(cls, mean: float, std: float):
        return cls([1.0], [mean], [std])

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        z = (x - self.means) / self.stds
        lp = -0.5 * z * z - np.log(self.stds) - 0.5 * _LOG_2PI
        with np.errstate(divide="ignore"):
            return logsumexp(lp + np.log(self.weights), axis=-1)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    @property
    def mean(self) -> float:
        return float(self.weights @ self.means)

    @property
    def var(self) -> float:
        return float(self.weights @ (self.stds ** 2 + self.means ** 2) - self.mean ** 2)

    def support(self, n_std: float = 8.0):
        return float(np.min(self.means - n_std * self.stds)), float(np.max(self.means + n_std * self.stds))

    def sample(self, n: int, rng: np.random.Generator):
        k = rng.choice(self.weights.size, size=n, p=self.weights)
        return self.means[k] + self.stds[k] * rng.standard_normal(n)


@dataclass(frozen=True)
class GridDensity:
    """Tabulated density, linearly interpolated and zero outside the grid."""

    x: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if x.shape != d.shape or x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("grid must be a strictly increasing 1-D array matching the density")
        mass = np.trapezoid(d, x)
        if not mass > 0:
            raise ValueError("grid density has no mass")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "density", d / mass)

    def pdf(self, x):
        return np.interp(x, self.x, self.density, left=0.0, right=0.0)

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    @property
    def mean(self) -> float:
        return float(np.trapezoid(self.x * self.density, self.x))

    @property
    def var(self) -> float:
        return float(np.trapezoid((self.x - self.mean) ** 2 * self.density, self.x))

    def support(self, n_std: float = 8.0):
        s = math.sqrt(max(self.var, 0.0))
        return max(self.x[0], self.mean - n_std * s), min(self.x[-1], self.mean + n_std * s)


@dataclass(frozen=True)
class DiscreteMarginal:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or not p.sum() > 0:
            raise ValueError("probabilities must be a non-negative 1-D array with positive mass")
        object.__setattr__(self, "probs", p / p.sum())

    @property
    def cardinality(self) -> int:
        return self.probs.size

    def pdf(self, x):
        return self.probs[np.asarray(x, dtype=int)]

    @property
    def mean(self) -> float:
        return float(np.arange(self.cardinality) @ self.probs)

    @property
    def mode(self) -> int:
        return int(np.argmax(self.probs))
