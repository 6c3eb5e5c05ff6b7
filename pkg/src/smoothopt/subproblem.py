"""Trust-region Newton solver for the per-iteration smoothed sub-problem."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from .smoothing import SmoothedObjective, SmoothingConfig

EIG_FLOOR = 1e-8
DEGENERATE_RANGE = 1e-14


@dataclass(frozen=True)
class RegionOfInterest:
    """Box of half-widths ``ranges`` around ``center``, intersected with the
    design box on non-periodic axes."""

    center: np.ndarray
    ranges: np.ndarray
    width: np.ndarray
    periodic: np.ndarray

    def __post_init__(self):
        for name in ("center", "ranges", "width"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "periodic", np.asarray(self.periodic, dtype=bool))
        if np.any(~(self.ranges > 0)):
            raise ValueError("ranges must be positive")

    @classmethod
    def around(cls, center, ranges, space) -> "RegionOfInterest":
        return cls(center, ranges, space.width, space.periodic)

    @property
    def lower(self) -> np.ndarray:
        lo = np.maximum(self.center - self.ranges, 0.0)
        return np.where(self.periodic, self.center - self.ranges, lo)

    @property
    def upper(self) -> np.ndarray:
        hi = np.minimum(self.center + self.ranges, self.width)
        return np.where(self.periodic, self.center + self.ranges, hi)


@dataclass
class SubproblemResult:
    minimizer: np.ndarray
    objective: float
    center_objective: float
    iterations: int
    termination: str


def project_to_roi(x, roi: RegionOfInterest) -> np.ndarray:
    """Clip ``x`` into the RoI. Periodic coordinates are first moved to the
    image closest to the RoI center."""
    x = np.array(x, dtype=float)
    if roi.periodic.any():
        p = roi.periodic
        period = roi.width[p]
        x[p] = roi.center[p] + np.mod(x[p] - roi.center[p] + period / 2, period) - period / 2
    return np.clip(x, roi.lower, roi.upper)


def floored_hessian(H) -> np.ndarray:
    """Symmetrised ``H`` with eigenvalues floored at ``EIG_FLOOR * ||H||``.

    A vanishing ``H`` is returned as the zero matrix.
    """
    H = 0.5 * (H + H.T)
    lam, Q = np.linalg.eigh(H)
    norm = np.max(np.abs(lam))
    if not norm > 0:
        return np.zeros_like(H)
    lam = np.maximum(lam, EIG_FLOOR * norm)
    return (Q * lam) @ Q.T


def box_qp_step(g, H, lo, hi) -> np.ndarray:
    """Minimise ``g.p + p.H.p / 2`` over ``lo <= p <= hi`` for positive
    semi-definite ``H`` (zero ``H`` gives the box corner along ``-g``)."""
    p = np.where(g > 0, lo, np.where(g < 0, hi, 0.0))
    free = hi > lo
    p[~free] = lo[~free]
    if not free.any() or not np.any(H):
        return p
    Hff = H[np.ix_(free, free)]
    gf = g[free] + H[np.ix_(free, ~free)] @ p[~free]
    lam, Q = np.linalg.eigh(0.5 * (Hff + Hff.T))
    lam = np.maximum(lam, EIG_FLOOR * max(np.max(np.abs(lam)), 1e-300))
    root = np.sqrt(lam)
    A = root[:, None] * Q.T
    b = -(Q.T @ gf) / root
    res = lsq_linear(A, b, bounds=(lo[free], hi[free]), method="bvls", tol=1e-14)
    p[free] = np.clip(res.x, lo[free], hi[free])
    return p


def solve(center, roi: RegionOfInterest, config: SmoothingConfig, field,
          budget: int = 5, gtol: float = 1e-8, xtol: float = 1e-10) -> SubproblemResult:
    """A few trust-region Newton steps on the smoothed field inside the RoI.

    Each iterate carries its own sample-average model (anchored at the
    iterate, same shared points). A step is kept only if it lowers the
    smoothed value, so the result never goes uphill from ``center``.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    x = np.array(center, dtype=float)
    model = SmoothedObjective(field, config, x)
    fx = model.value(x)
    f0 = fx
    if np.all(roi.ranges < DEGENERATE_RANGE):
        return SubproblemResult(x, fx, f0, 0, "step-small")

    radius = 0.5 * float(np.min(roi.ranges))
    termination = "max-iters"
    it = 0
    for it in range(1, budget + 1):
        g = model.gradient(x)
        if np.max(np.abs(g)) <= gtol:
            termination = "gradient-small"
            break
        H = floored_hessian(model.hessian(x))
        lo = np.maximum(-radius, roi.lower - x)
        hi = np.minimum(radius, roi.upper - x)
        p = box_qp_step(g, H, lo, hi)
        if np.max(np.abs(p)) <= xtol:
            termination = "step-small"
            break
        predicted = -(g @ p + 0.5 * p @ H @ p)
        trial = x + p
        trial_model = SmoothedObjective(field, config, trial)
        ft = trial_model.value(trial)
        ratio = (fx - ft) / predicted if predicted > 0 else -np.inf
        if ft < fx:
            x, fx, model = trial, ft, trial_model
        if ratio < 0.25:
            radius *= 0.25
        elif ratio > 0.75 and np.max(np.abs(p)) >= 0.99 * radius:
            radius *= 2.0
    return SubproblemResult(x, fx, f0, it, termination)
