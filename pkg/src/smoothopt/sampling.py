"""Point generators: Latin hypercube designs, truncated normal perturbations
and Sobol' points mapped to normal variates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .design_space import DesignSpace, ExtendedBox

MAX_REJECTION_ROUNDS = 1000
SOBOL_MAX_DIM = 21201


class SamplingError(RuntimeError):
    """Rejection sampling exhausted its retry budget."""


@dataclass(frozen=True)
class SeededStream:
    """Reproducible random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SobolSet:
    dimension: int
    count: int
    skip: int = 0

    def __post_init__(self):
        if self.dimension < 1 or self.count < 1 or self.skip < 0:
            raise ValueError("SobolSet needs dimension >= 1, count >= 1, skip >= 0")
        if self.count > 2**31:
            raise ValueError("count must not exceed 2**31")


def latin_hypercube(n: int, space: DesignSpace, stream: SeededStream) -> np.ndarray:
    """``n`` physical design points with one point per stratum on every axis."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream.generator()
    d = space.dim
    u = np.empty((n, d))
    for j in range(d):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    # (k + u)/n can round up to 1.0 for the top stratum
    u = np.minimum(u, np.nextafter(1.0, 0.0))
    return space.lower + u * (space.upper - space.lower)


def sample_truncated_normal(mean, sigmas, n: int, box: ExtendedBox,
                            stream: SeededStream) -> np.ndarray:
    """Draw ``n`` points from ``N(mean, diag(sigmas**2))`` restricted to the box.

    Coordinates are truncated independently by rejection. Periodic axes are
    drawn without truncation and wrapped. Works in internal units.
    """
    space = box.base
    mean = np.asarray(mean, dtype=float)
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), mean.shape)
    if np.any(~(sigmas > 0)):
        raise ValueError("sigmas must be positive")
    rng = stream.generator()
    lo, hi = box.lower, box.upper
    out = mean + sigmas * rng.standard_normal((n, space.dim))
    for j in range(space.dim):
        if space.periodic[j]:
            continue
        bad = (out[:, j] < lo[j]) | (out[:, j] > hi[j])
        rounds = 0
        while bad.any():
            rounds += 1
            if rounds > MAX_REJECTION_ROUNDS:
                raise SamplingError(
                    f"axis {j}: no admissible draw after {MAX_REJECTION_ROUNDS} rounds; "
                    "delta*sigma is inconsistent with the box width")
            out[bad, j] = mean[j] + sigmas[j] * rng.standard_normal(int(bad.sum()))
            bad = (out[:, j] < lo[j]) | (out[:, j] > hi[j])
    return space.wrap(out)


@lru_cache(maxsize=16)
def _sobol_cached(dimension: int, count: int, skip: int) -> np.ndarray:
    if dimension > SOBOL_MAX_DIM:
        raise ValueError(f"Sobol' direction numbers tabulated up to d={SOBOL_MAX_DIM}")
    engine = qmc.Sobol(d=dimension, scramble=False)
    # the first point of the sequence is the origin, which is not in (0,1)^d
    engine.fast_forward(1 + skip)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        pts = engine.random(count)
    pts.setflags(write=False)
    return pts


def sobol_unit_points(sobol: SobolSet) -> np.ndarray:
    """First ``count`` points (after ``skip``) of the unscrambled Sobol'
    sequence, excluding the origin. Shape ``(count, dimension)``."""
    return _sobol_cached(sobol.dimension, sobol.count, sobol.skip)


def unit_to_normal(points, mean, sigmas) -> np.ndarray:
    """Inverse-CDF map of unit-cube points to ``N(mean, diag(sigmas**2))``."""
    points = np.asarray(points, dtype=float)
    if np.any(~((points > 0.0) & (points < 1.0))):
        raise ValueError("unit points must lie strictly inside (0, 1)")
    return np.asarray(mean, dtype=float) + np.asarray(sigmas, dtype=float) * ndtri(points)


@lru_cache(maxsize=16)
def _normal_cached(dimension: int, count: int, skip: int) -> np.ndarray:
    w = ndtri(_sobol_cached(dimension, count, skip))
    w.setflags(write=False)
    return w


def standard_normal_points(sobol: SobolSet) -> np.ndarray:
    """Cached standard normal variates for a Sobol' set, shape ``(count, d)``."""
    return _normal_cached(sobol.dimension, sobol.count, sobol.skip)
