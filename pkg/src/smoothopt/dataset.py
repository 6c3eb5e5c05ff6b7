"""Evaluation records and the nearest-neighbour (piecewise-constant) interpolant."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .io import atomic_write_text, fmt

TAGS = ("doe", "perturbation", "external", "external-failure")

# relative gap between the two nearest tree distances below which the
# winner is re-derived by exact linear scan (tie rule: lowest index)
_TIE_RTOL = 1e-9


def wrapped_distances(X, sites, period=None) -> np.ndarray:
    """Euclidean distances from each row of ``X`` to every site.

    ``period`` holds the per-axis period (0 for non-periodic axes).
    Returns an array of shape ``(len(X), len(sites))``.
    """
    return _norm(_wrapped_diff(X[:, None, :] - sites[None, :, :], period))


def _wrapped_diff(diff, period):
    diff = np.abs(diff)
    if period is not None and np.any(period > 0):
        p = np.where(period > 0, period, np.inf)
        m = np.mod(diff, p)
        diff = np.where(period > 0, np.minimum(m, p - m), diff)
    return diff


def _norm(diff) -> np.ndarray:
    """Euclidean norm over the last axis, scaled against under/overflow."""
    big = np.max(diff, axis=-1)
    safe = np.where(big > 0, big, 1.0)
    return big * np.sqrt(np.sum((diff / safe[..., None]) ** 2, axis=-1))


def linear_scan(X, sites, period=None):
    """Brute-force nearest neighbour: ``(indices, distances)``.

    ``argmin`` returns the first minimum, i.e. the lowest insertion index.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    idx = np.empty(len(X), dtype=np.intp)
    dist = np.empty(len(X))
    for start in range(0, len(X), 512):
        D = wrapped_distances(X[start:start + 512], sites, period)
        i = np.argmin(D, axis=1)
        idx[start:start + 512] = i
        dist[start:start + 512] = D[np.arange(len(i)), i]
    return idx, dist


@numba.njit(cache=True)
def _nearest_sorted(xs, ids, x):
    """Nearest entry of the sorted, duplicate-free ``xs`` for each query.

    Equidistant neighbours resolve to the lower original index ``ids``.
    """
    m = xs.size
    idx = np.empty(x.size, dtype=np.intp)
    dist = np.empty(x.size)
    ascending = True
    for q in range(1, x.size):
        if x[q] < x[q - 1]:
            ascending = False
            break
    lo = 0
    for q in range(x.size):
        v = x[q]
        if ascending:
            # sorted queries: advance a cursor instead of bisecting
            while lo < m and xs[lo] < v:
                lo += 1
        else:
            lo, hi = 0, m
            while lo < hi:
                mid = (lo + hi) >> 1
                if xs[mid] < v:
                    lo = mid + 1
                else:
                    hi = mid
        r = min(lo, m - 1)
        l = max(lo - 1, 0)
        dl = abs(v - xs[l])
        dr = abs(v - xs[r])
        if dr < dl or (dr == dl and ids[r] < ids[l]):
            idx[q] = ids[r]
            dist[q] = dr
        else:
            idx[q] = ids[l]
            dist[q] = dl
    return idx, dist


class NearestNeighborInterpolant(RegressorMixin, BaseEstimator):
    """Piecewise-constant interpolant on the Voronoi cells of the sites.

    Parameters
    ----------
    period : array-like of shape (n_features,), optional
        Per-axis period for wrapped distances; 0 marks a non-periodic axis.
    """

    def __init__(self, period=None):
        self.period = period

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(X):
            raise ValueError("X and y have inconsistent lengths")
        if not np.all(np.isfinite(y)):
            raise ValueError("values must be finite")
        d = X.shape[1]
        period = np.zeros(d) if self.period is None else np.asarray(self.period, dtype=float)
        if period.shape != (d,):
            raise ValueError("period must have one entry per feature")
        X = X.copy()
        if np.any(period > 0):
            X[:, period > 0] = np.mod(X[:, period > 0], period[period > 0])
        self.sites_ = X
        self.values_ = y.copy()
        self.period_ = period
        self.n_features_in_ = d
        self._periodic = bool(np.any(period > 0))
        if d == 1 and not self._periodic:
            # a 1-D k-d tree is a sorted array; stable sort keeps the lowest
            # insertion index first among coincident sites
            order = np.argsort(X[:, 0], kind="stable")
            xs = X[order, 0]
            keep = np.ones(len(xs), dtype=bool)
            keep[1:] = xs[1:] != xs[:-1]
            self._sorted_x = xs[keep]
            self._sorted_idx = order[keep]
            self.tree_ = None
        else:
            boxsize = period if self._periodic else None
            self.tree_ = cKDTree(X, boxsize=boxsize)
        return self

    def _prepare(self, X) -> np.ndarray:
        check_is_fitted(self, "sites_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if self._periodic:
            X = X.copy()
            p = self.period_
            X[:, p > 0] = np.mod(X[:, p > 0], p[p > 0])
        return X

    def _query_1d(self, x):
        return _nearest_sorted(self._sorted_x, self._sorted_idx, np.ascontiguousarray(x))

    def query(self, X):
        """Nearest site index and distance for each row of ``X``."""
        X = self._prepare(X)
        n = len(self.sites_)
        if self.tree_ is None:
            return self._query_1d(X[:, 0])
        if n == 1:
            idx = np.zeros(len(X), dtype=np.intp)
        else:
            dist, nbrs = self.tree_.query(X, k=2)
            idx = nbrs[:, 0].astype(np.intp)
            near_tie = dist[:, 1] <= dist[:, 0] * (1.0 + _TIE_RTOL) + 1e-300
            if near_tie.any():
                rows = np.flatnonzero(near_tie)
                idx[rows], _ = linear_scan(X[rows], self.sites_, self.period_)
        dist = wrapped_distances_paired(X, self.sites_[idx], self.period_)
        return idx, dist

    def predict(self, X) -> np.ndarray:
        idx, _ = self.query(X)
        return self.values_[idx]


def wrapped_distances_paired(X, S, period=None) -> np.ndarray:
    """Row-wise distances between ``X[i]`` and ``S[i]``."""
    return _norm(_wrapped_diff(X - S, period))


@dataclass
class EvaluationRecord:
    site: np.ndarray
    value: float
    iteration: int = 0
    tag: str = "perturbation"

    def __post_init__(self):
        self.site = np.atleast_1d(np.asarray(self.site, dtype=float))
        self.value = float(self.value)
        if not math.isfinite(self.value):
            raise ValueError("record value must be finite")
        if self.tag not in TAGS:
            raise ValueError(f"unknown record tag {self.tag!r}")

    def to_json(self) -> str:
        site = ", ".join(fmt(v) for v in self.site)
        return (f'{{"site": [{site}], "value": {fmt(self.value)}, '
                f'"iteration": {int(self.iteration)}, "tag": "{self.tag}"}}')

    @classmethod
    def from_json(cls, line: str) -> "EvaluationRecord":
        obj = json.loads(line)
        return cls(np.array(obj["site"], dtype=float), obj["value"],
                   int(obj["iteration"]), obj["tag"])


class EvaluationDataset:
    """Append-only store of evaluations backing the NN interpolant.

    The interpolant is rebuilt in bulk on the first query after an insert.
    """

    def __init__(self, dim: int, period=None):
        self.dim = int(dim)
        self.period = np.zeros(self.dim) if period is None else np.asarray(period, dtype=float)
        self.records: list[EvaluationRecord] = []
        self._model = None

    def __len__(self) -> int:
        return len(self.records)

    def insert(self, record: EvaluationRecord) -> "EvaluationDataset":
        if record.site.shape != (self.dim,):
            raise ValueError(f"site dimension {record.site.shape} != ({self.dim},)")
        self.records.append(record)
        self._model = None
        return self

    def extend(self, records) -> "EvaluationDataset":
        for r in records:
            self.insert(r)
        return self

    @property
    def sites(self) -> np.ndarray:
        return np.array([r.site for r in self.records]).reshape(-1, self.dim)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records])

    @property
    def interpolant(self) -> NearestNeighborInterpolant:
        if not self.records:
            raise ValueError("dataset is empty")
        if self._model is None:
            self._model = NearestNeighborInterpolant(self.period).fit(self.sites, self.values)
        return self._model

    def nn_predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        out = self.interpolant.predict(X.reshape(-1, self.dim))
        return out[0] if single else out

    def nn_query(self, x):
        """``(site, value, distance)`` of the nearest record to ``x``."""
        model = self.interpolant
        idx, dist = model.query(np.asarray(x, dtype=float).reshape(1, self.dim))
        i = int(idx[0])
        return self.records[i].site.copy(), self.records[i].value, float(dist[0])

    def __call__(self, X) -> np.ndarray:
        return self.interpolant.predict(X)

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def save(self, path) -> None:
        atomic_write_text(path, self.to_jsonl())

    @classmethod
    def load(cls, path, dim: int, period=None) -> "EvaluationDataset":
        ds = cls(dim, period)
        for line in Path(path).read_text().splitlines():
            if line.strip():
                ds.insert(EvaluationRecord.from_json(line))
        return ds
