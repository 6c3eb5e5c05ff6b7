"""Gaussian-smoothed objective and its score-function derivatives.

The smoothed objective of a scalar field ``f`` is the expectation of
``f(Y)`` with ``Y ~ N(x, diag(sigmas**2))``. It is estimated by a sample
average over Sobol' points mapped to normal variates. Samples are drawn
once around an *anchor*. At any other ``x`` each sample is reweighted by
the density ratio ``p(z; x) / p(z; anchor)``. This makes the estimate a
smooth, deterministic function of ``x`` whose exact gradient and Hessian
are the weighted score-function averages. At ``x == anchor`` the weights
are exactly one and the usual sample-average formulas are recovered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .sampling import SobolSet, standard_normal_points

DEFAULT_SAMPLES = 2**16


@lru_cache(maxsize=8)
def _ascending_order(dimension: int, count: int, skip: int) -> np.ndarray:
    w = standard_normal_points(SobolSet(dimension, count, skip))
    order = np.argsort(w[:, 0], kind="stable")
    order.setflags(write=False)
    return order


def gaussian_pdf(y, x, sigmas) -> float:
    """Density of ``N(x, diag(sigmas**2))`` at ``y``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), y.shape)
    if np.any(~(sigmas > 0)):
        raise ValueError("sigmas must be positive")
    t = (y - x) / sigmas
    d = y.size
    return float(np.exp(-0.5 * np.sum(t * t)) / ((2 * np.pi) ** (d / 2) * np.prod(sigmas)))


@dataclass(frozen=True)
class SmoothingConfig:
    """Diagonal covariance plus the shared quasi-random point set."""

    sigmas: tuple
    n_samples: int = DEFAULT_SAMPLES
    skip: int = 0
    delta: float = 3.0

    def __post_init__(self):
        sig = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        if np.any(~(sig > 0)) or not np.all(np.isfinite(sig)):
            raise ValueError("sigmas must be positive and finite")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        object.__setattr__(self, "sigmas", tuple(float(s) for s in sig))

    @property
    def dim(self) -> int:
        return len(self.sigmas)

    @property
    def sigma_array(self) -> np.ndarray:
        return np.array(self.sigmas)

    @property
    def shared_points(self) -> SobolSet:
        return SobolSet(self.dim, self.n_samples, self.skip)

    def normal_points(self) -> np.ndarray:
        """Standard normal variates ``w_i`` (shape ``(M, d)``), shared by
        every evaluation that uses this configuration."""
        return standard_normal_points(self.shared_points)


class SmoothedObjective:
    """Sample-average model of the smoothed field around one anchor.

    The field is evaluated once, at ``z_i = anchor + sigmas * w_i``.
    ``value``, ``gradient`` and ``hessian`` then cost O(M d) and O(M d^2)
    without further field calls.

    Parameters
    ----------
    field : callable
        Maps an ``(M, d)`` array of points to ``M`` values.
    config : SmoothingConfig
    anchor : array-like of shape (d,)
    """

    def __init__(self, field, config: SmoothingConfig, anchor):
        self.config = config
        self.anchor = np.array(anchor, dtype=float).reshape(config.dim)
        self.sigmas = config.sigma_array
        w = config.normal_points()
        self._wT = np.ascontiguousarray(w.T)
        if config.dim == 1:
            # ascending queries make 1-D nearest-neighbour lookups a merge
            order = _ascending_order(config.dim, config.n_samples, config.skip)
            z = self.anchor + self.sigmas * w[order]
            sorted_vals = np.asarray(field(z), dtype=float).reshape(-1)
            if sorted_vals.shape != (len(w),):
                raise ValueError("field must return one value per sample point")
            vals = np.empty(len(w))
            vals[order] = sorted_vals
        else:
            z = self.anchor + self.sigmas * w
            vals = np.asarray(field(z), dtype=float).reshape(-1)
            if vals.shape != (len(w),):
                raise ValueError("field must return one value per sample point")
        self.field_values = vals
        self.n_samples = len(vals)

    def _terms(self, x):
        """Per-sample weighted field values and normalised offsets ``(z - x)/sigma``."""
        x = np.asarray(x, dtype=float).reshape(self.config.dim)
        shift = (x - self.anchor) / self.sigmas
        if not np.any(shift):
            return self.field_values, self._wT
        t = self._wT - shift[:, None]
        log_ratio = np.zeros(self.n_samples)
        for j in range(len(shift)):
            log_ratio += shift[j] * self._wT[j]
        log_ratio -= 0.5 * float(np.dot(shift, shift))
        return self.field_values * np.exp(log_ratio), t

    def value(self, x) -> float:
        fw, _ = self._terms(x)
        return float(np.sum(fw) / self.n_samples)

    def value_and_stderr(self, x):
        fw, _ = self._terms(x)
        mean = float(np.sum(fw) / self.n_samples)
        return mean, float(np.std(fw, ddof=1) / math.sqrt(self.n_samples))

    def gradient(self, x) -> np.ndarray:
        fw, t = self._terms(x)
        d = self.config.dim
        g = np.empty(d)
        for j in range(d):
            g[j] = np.sum(fw * t[j]) / self.n_samples / self.sigmas[j]
        return g

    def hessian(self, x) -> np.ndarray:
        fw, t = self._terms(x)
        d = self.config.dim
        H = np.empty((d, d))
        for j in range(d):
            ftj = fw * t[j]
            for k in range(j, d):
                s = np.sum(ftj * t[k])
                if k == j:
                    s -= np.sum(fw)
                H[j, k] = H[k, j] = s / self.n_samples / (self.sigmas[j] * self.sigmas[k])
        return H


def _model(x, config, field, anchor):
    anchor = x if anchor is None else anchor
    return SmoothedObjective(field, config, anchor)


def estimate_objective(x, config: SmoothingConfig, field, anchor=None):
    """``(mean, standard error)`` of the smoothed field at ``x``."""
    return _model(x, config, field, anchor).value_and_stderr(x)


def estimate_gradient(x, config: SmoothingConfig, field, anchor=None) -> np.ndarray:
    return _model(x, config, field, anchor).gradient(x)


def estimate_hessian(x, config: SmoothingConfig, field, anchor=None) -> np.ndarray:
    return _model(x, config, field, anchor).hessian(x)


def smoothed_values(points, config: SmoothingConfig, field) -> np.ndarray:
    """Smoothed field at each row of ``points``, each anchored at itself."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return np.array([SmoothedObjective(field, config, p).value(p) for p in points])
