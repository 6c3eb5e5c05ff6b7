"""Box-constrained design spaces and the physical/internal unit mapping.

All optimizer state lives in *internal* units: each axis is shifted to start
at zero and multiplied by a positive scale so that a single standard
deviation applies to every variable. Periodic axes (orientations) wrap
instead of being bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _as_vector(x, d: int, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != d:
        raise ValueError(f"{name} has dimension {arr.shape[-1]}, expected {d}")
    return arr


@dataclass(frozen=True)
class DesignSpace:
    """Feasible box ``B`` with per-axis scaling.

    Parameters
    ----------
    lower, upper : array-like of shape (d,)
        Physical bounds. ``lower < upper`` on every axis.
    periodic : array-like of bool, optional
        Axes whose period is ``upper - lower``.
    scale : array-like of shape (d,), optional
        Multiplier from physical to internal units (default 1).
    """

    lower: np.ndarray
    upper: np.ndarray
    periodic: np.ndarray = field(default=None)
    scale: np.ndarray = field(default=None)

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D vectors of equal length")
        d = lower.size
        periodic = (np.zeros(d, dtype=bool) if self.periodic is None
                    else np.atleast_1d(np.asarray(self.periodic, dtype=bool)))
        scale = (np.ones(d) if self.scale is None
                 else np.atleast_1d(np.asarray(self.scale, dtype=float)))
        if periodic.shape != (d,) or scale.shape != (d,):
            raise ValueError("periodic and scale must match the bounds' dimension")
        if not np.all(np.isfinite(lower)) or not np.all(np.isfinite(upper)):
            raise ValueError("bounds must be finite")
        if np.any(lower >= upper):
            raise ValueError("lower_i < upper_i violated")
        if np.any(~(scale > 0)) or not np.all(np.isfinite(scale)):
            raise ValueError("scale_i > 0 violated")
        for name, value in (("lower", lower), ("upper", upper),
                            ("periodic", periodic), ("scale", scale)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_sigmas(cls, lower, upper, sigmas, periodic=None) -> "DesignSpace":
        """Scale each axis so that its physical ``sigma`` becomes 1 internally."""
        sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
        if np.any(~(sigmas > 0)):
            raise ValueError("sigmas must be positive")
        return cls(lower, upper, periodic=periodic, scale=1.0 / sigmas)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        """Internal-unit extent of each axis (the period on periodic axes)."""
        return (self.upper - self.lower) * self.scale

    def wrap(self, y) -> np.ndarray:
        """Reduce periodic coordinates of internal vectors into ``[0, width)``."""
        y = np.array(y, dtype=float)
        if self.periodic.any():
            w = self.width[self.periodic]
            m = np.mod(y[..., self.periodic], w)
            # mod of a tiny negative rounds to the period itself
            y[..., self.periodic] = np.where(m >= w, 0.0, m)
        return y

    def to_internal(self, x) -> np.ndarray:
        x = _as_vector(x, self.dim)
        return self.wrap((x - self.lower) * self.scale)

    def to_physical(self, y) -> np.ndarray:
        y = self.wrap(_as_vector(y, self.dim, "y"))
        return self.lower + y / self.scale

    def contains(self, y, delta: float = 0.0, sigma: float = 0.0) -> np.ndarray:
        """Membership of internal vectors in ``B`` (or ``B_delta`` when
        ``delta * sigma > 0``). Periodic axes always pass."""
        y = _as_vector(y, self.dim, "y")
        pad = delta * sigma
        inside = (y >= -pad) & (y <= self.width + pad)
        inside |= self.periodic
        return np.all(inside, axis=-1)

    def clamp(self, y) -> np.ndarray:
        """Project internal vectors onto ``B``; periodic axes wrap."""
        y = _as_vector(y, self.dim, "y")
        clipped = np.clip(y, 0.0, self.width)
        clipped = np.where(self.periodic, y, clipped)
        return self.wrap(clipped)


@dataclass(frozen=True)
class ExtendedBox:
    """The sampling box ``B_delta``: ``B`` padded by ``delta * sigma``
    (internal units) on every non-periodic axis."""

    base: DesignSpace
    delta: float
    sigma: float

    def __post_init__(self):
        if not self.delta > 0 or not self.sigma > 0:
            raise ValueError("delta and sigma must be positive")

    @property
    def lower(self) -> np.ndarray:
        lo = np.full(self.base.dim, -self.delta * self.sigma)
        return np.where(self.base.periodic, -np.inf, lo)

    @property
    def upper(self) -> np.ndarray:
        hi = self.base.width + self.delta * self.sigma
        return np.where(self.base.periodic, np.inf, hi)

    def contains(self, y) -> np.ndarray:
        return self.base.contains(y, self.delta, self.sigma)
