"""Smoothed-surrogate optimizer with an adaptive move-limit region of interest.

One iteration draws ``alpha * d`` truncated-normal perturbations of the
current design, evaluates them, refits the nearest-neighbour surrogate on
all data, minimises the Gaussian-smoothed surrogate inside the region of
interest and then adapts the region half-widths and the standard deviations
from the normalised step history.

All state is kept in internal units (see ``DesignSpace``).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .dataset import EvaluationDataset, EvaluationRecord
from .design_space import DesignSpace, ExtendedBox
from .io import atomic_write_text, json_value
from .objectives import ExternalObjective, evaluate_design
from .sampling import SeededStream, latin_hypercube, sample_truncated_normal
from .smoothing import DEFAULT_SAMPLES, SmoothedObjective, SmoothingConfig
from .subproblem import RegionOfInterest, solve

CACHE_TOL = 1e-14
TRACE_FILE = "trace.jsonl"
DATASET_FILE = "dataset.jsonl"


@dataclass(frozen=True)
class MoveLimitConfig:
    """Hyperparameters of the outer loop (sigmas in internal units).

    ``n0=None`` means ``3 * d``.
    """

    gamma_pan: float = 1.2
    gamma_osc: float = 0.8
    eta: float = 0.8
    beta: float = 2.0
    alpha: float = 3.0
    n0: int | None = None
    sigma_target: float = 1.0
    sigma_max: float = 10.0
    k_max: int = 100
    delta: float = 3.0

    def __post_init__(self):
        if not 0 < self.gamma_osc <= self.eta <= 1 <= self.gamma_pan:
            raise ValueError("0 < gamma_osc <= eta <= 1 <= gamma_pan violated")
        if not 1 <= self.beta <= 3:
            raise ValueError("beta must lie in [1, 3]")
        if not 2 <= self.alpha <= 10:
            raise ValueError("alpha must lie in [2, 10]")
        if not 0 < self.sigma_target <= self.sigma_max or not math.isfinite(self.sigma_max):
            raise ValueError("0 < sigma_target <= sigma_max violated")
        if self.n0 is not None and self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def doe_count(self, d: int) -> int:
        return 3 * d if self.n0 is None else int(self.n0)

    def batch_size(self, d: int) -> int:
        return max(1, int(round(self.alpha * d)))


@dataclass(frozen=True)
class RunOptions:
    """Settings that are not part of the move-limit scheme."""

    n_samples: int = DEFAULT_SAMPLES
    skip: int = 0
    budget: int = 5
    workers: int = 1


@dataclass
class OptimizerState:
    k: int
    x: np.ndarray
    ranges: np.ndarray
    sigmas: np.ndarray
    prev_steps: np.ndarray | None
    dataset: EvaluationDataset
    space: DesignSpace
    seed: int
    best_site: np.ndarray
    best_value: float
    trace: list = field(default_factory=list)


def move_limit_update(step, prev_step, ranges, config: MoveLimitConfig):
    """Scale the half-widths by the contraction rate and re-derive sigmas.

    ``step`` is the normalised step (``|s_i| <= 1``); ``prev_step=None`` marks
    the first iteration, where the oscillation indicator is taken as 1.
    """
    s = np.asarray(step, dtype=float)
    if prev_step is None:
        c_hat = np.ones_like(s)
    else:
        c = s * np.asarray(prev_step, dtype=float)
        c_hat = np.sign(c) * np.sqrt(np.abs(c))
    gamma = 0.5 * (config.gamma_pan * (1 + c_hat) + config.gamma_osc * (1 - c_hat))
    lam = config.eta + np.abs(s) * (gamma - config.eta)
    ranges = lam * np.asarray(ranges, dtype=float)
    sigmas = np.minimum(np.maximum(ranges / config.beta, config.sigma_target), config.sigma_max)
    return ranges, sigmas


def _period(space: DesignSpace) -> np.ndarray:
    return np.where(space.periodic, space.width, 0.0)


def _executor(objective, workers: int):
    if workers <= 1:
        return None
    # subprocess-backed objectives only wait on children; threads suffice
    if isinstance(objective, ExternalObjective):
        return ThreadPoolExecutor(workers)
    return ProcessPoolExecutor(workers)


def _evaluate_batch(objective, designs, executor=None):
    """Evaluate physical designs in order; ``[(value, failed), ...]``."""
    if executor is None:
        return [evaluate_design(objective, x) for x in designs]
    return list(executor.map(evaluate_design, [objective] * len(designs), designs))


def _evaluate_points(space, dataset, Y, objective, iteration, tag, executor):
    """Evaluate internal points and append them to the dataset.

    A point within ``CACHE_TOL`` of an existing site (or of an earlier point
    of the same batch) reuses that value instead of calling the objective.
    """
    Y = np.atleast_2d(Y)
    n = len(Y)
    values = np.empty(n)
    failed = np.zeros(n, dtype=bool)
    source = np.full(n, -1)  # index of an earlier batch twin
    todo = []
    for i, y in enumerate(Y):
        if len(dataset):
            _, value, dist = dataset.nn_query(y)
            if dist <= CACHE_TOL:
                values[i] = value
                continue
        twin = next((j for j in todo if np.max(np.abs(Y[j] - y)) <= CACHE_TOL), None)
        if twin is None:
            todo.append(i)
        else:
            source[i] = twin
    physical = [space.to_physical(Y[i]) for i in todo]
    for i, (v, f) in zip(todo, _evaluate_batch(objective, physical, executor)):
        values[i], failed[i] = v, f
    for i in np.flatnonzero(source >= 0):
        values[i], failed[i] = values[source[i]], failed[source[i]]
    dataset.extend(EvaluationRecord(y, v, iteration, "external-failure" if f else tag)
                   for y, v, f in zip(Y, values, failed))
    return values


def initialize(config: MoveLimitConfig, space: DesignSpace, objective, stream: SeededStream,
               executor=None) -> OptimizerState:
    """Evaluate the Latin hypercube DoE and set up iteration 1."""
    d = space.dim
    n0 = config.doe_count(d)
    doe = latin_hypercube(n0, space, SeededStream(stream.seed, 0))
    Y = np.array([space.to_internal(x) for x in doe])
    dataset = EvaluationDataset(d, _period(space))
    values = _evaluate_points(space, dataset, Y, objective, 0, "doe", executor)
    i = int(np.argmin(values))
    return OptimizerState(
        k=1, x=Y[i].copy(),
        ranges=np.full(d, config.beta * config.sigma_max),
        sigmas=np.full(d, config.sigma_max),
        prev_steps=None, dataset=dataset, space=space, seed=int(stream.seed),
        best_site=Y[i].copy(), best_value=float(values[i]))


def normalized_step(x, x_next, ranges, space: DesignSpace) -> np.ndarray:
    diff = np.asarray(x_next, dtype=float) - np.asarray(x, dtype=float)
    if space.periodic.any():
        w = space.width
        p = space.periodic
        diff[p] = np.mod(diff[p] + w[p] / 2, w[p]) - w[p] / 2
    return np.clip(diff / ranges, -1.0, 1.0)


def iterate(state: OptimizerState, config: MoveLimitConfig, objective,
            options: RunOptions = RunOptions(), executor=None) -> OptimizerState:
    """One outer iteration; mutates and returns ``state``."""
    if state.k > config.k_max:
        raise ValueError("iteration counter already past k_max")
    space = state.space
    d = space.dim
    box = ExtendedBox(space, config.delta, config.sigma_target)
    Y = sample_truncated_normal(state.x, state.sigmas, config.batch_size(d), box,
                                SeededStream(state.seed, state.k))
    values = _evaluate_points(space, state.dataset, Y, objective, state.k,
                              "perturbation", executor)
    i = int(np.argmin(values))
    if values[i] < state.best_value:
        state.best_site, state.best_value = Y[i].copy(), float(values[i])

    smoothing = SmoothingConfig(tuple(state.sigmas), options.n_samples, options.skip, config.delta)
    field_ = state.dataset.interpolant.predict
    roi = RegionOfInterest.around(state.x, state.ranges, space)
    result = solve(state.x, roi, smoothing, field_, budget=options.budget)
    x_next = space.wrap(result.minimizer)
    steps = normalized_step(state.x, x_next, state.ranges, space)
    ranges, sigmas = move_limit_update(steps, state.prev_steps, state.ranges, config)

    state.trace.append({
        "k": state.k,
        "x": state.x.tolist(),
        "x_next": x_next.tolist(),
        "objective_center": result.center_objective,
        "objective": result.objective,
        "ranges": state.ranges.tolist(),
        "sigmas": state.sigmas.tolist(),
        "steps": steps.tolist(),
        "ranges_next": ranges.tolist(),
        "sigmas_next": sigmas.tolist(),
        "n_records": len(state.dataset),
        "best_value": state.best_value,
        "best_site": state.best_site.tolist(),
        "inner_iterations": result.iterations,
        "termination": result.termination,
    })
    state.x, state.ranges, state.sigmas, state.prev_steps = x_next, ranges, sigmas, steps
    state.k += 1
    return state


@dataclass
class RunReport:
    x_star: np.ndarray
    x_star_internal: np.ndarray
    sigmas: np.ndarray
    final_objective: float
    best_smoothed_iterate: np.ndarray
    best_raw_site: np.ndarray
    best_raw_value: float
    trace: list
    dataset: EvaluationDataset
    dataset_path: Path | None = None
    trace_path: Path | None = None


def trace_text(trace) -> str:
    return "".join(json_value(row) + "\n" for row in trace)


def _checkpoint(state: OptimizerState, out_dir: Path | None):
    if out_dir is None:
        return
    # dataset first: a crash in between leaves extra records, which resume drops
    state.dataset.save(out_dir / DATASET_FILE)
    atomic_write_text(out_dir / TRACE_FILE, trace_text(state.trace))


def _resume(config: MoveLimitConfig, space: DesignSpace, seed: int, out_dir: Path):
    """Rebuild the state from the dataset and trace files in ``out_dir``."""
    ds_path, tr_path = out_dir / DATASET_FILE, out_dir / TRACE_FILE
    if not ds_path.exists():
        return None
    full = EvaluationDataset.load(ds_path, space.dim, _period(space))
    trace = []
    if tr_path.exists():
        trace = [json.loads(line) for line in tr_path.read_text().splitlines() if line.strip()]
    last_k = trace[-1]["k"] if trace else 0
    dataset = EvaluationDataset(space.dim, _period(space))
    dataset.extend(r for r in full.records if r.iteration <= last_k)
    n0 = config.doe_count(space.dim)
    if sum(r.iteration == 0 for r in dataset.records) != n0:
        return None
    doe = dataset.values[:n0]
    i0 = int(np.argmin(doe))
    vals = dataset.values
    ib = int(np.argmin(vals))
    if not trace:
        return OptimizerState(
            k=1, x=dataset.sites[i0].copy(),
            ranges=np.full(space.dim, config.beta * config.sigma_max),
            sigmas=np.full(space.dim, config.sigma_max), prev_steps=None,
            dataset=dataset, space=space, seed=seed,
            best_site=dataset.sites[ib].copy(), best_value=float(vals[ib]))
    tail = trace[-1]
    return OptimizerState(
        k=last_k + 1, x=np.array(tail["x_next"]), ranges=np.array(tail["ranges_next"]),
        sigmas=np.array(tail["sigmas_next"]), prev_steps=np.array(tail["steps"]),
        dataset=dataset, space=space, seed=seed,
        best_site=dataset.sites[ib].copy(), best_value=float(vals[ib]), trace=trace)


def run(config: MoveLimitConfig, space: DesignSpace, objective, stream: SeededStream,
        options: RunOptions = RunOptions(), out_dir=None, resume: bool = False) -> RunReport:
    """Initialise, iterate up to ``k_max`` and report.

    ``x_star`` is the last sub-problem minimiser. The best raw evaluation and
    the iterate with the lowest smoothed value are reported alongside.
    """
    out_dir = None if out_dir is None else Path(out_dir)
    executor = _executor(objective, options.workers)
    try:
        state = None
        if resume and out_dir is not None:
            state = _resume(config, space, int(stream.seed), out_dir)
        if state is None:
            state = initialize(config, space, objective, stream, executor)
            _checkpoint(state, out_dir)
        while state.k <= config.k_max:
            iterate(state, config, objective, options, executor)
            _checkpoint(state, out_dir)
    finally:
        if executor is not None:
            executor.shutdown()

    if state.trace:
        final = state.trace[-1]["objective"]
        j = int(np.argmin([row["objective"] for row in state.trace]))
        best_iter = np.array(state.trace[j]["x_next"])
    else:
        smoothing = SmoothingConfig(tuple(state.sigmas), options.n_samples, options.skip)
        final = SmoothedObjective(state.dataset.interpolant.predict, smoothing,
                                  state.x).value(state.x)
        best_iter = state.x.copy()
    return RunReport(
        x_star=space.to_physical(state.x), x_star_internal=state.x.copy(),
        sigmas=state.sigmas.copy(), final_objective=float(final),
        best_smoothed_iterate=space.to_physical(best_iter),
        best_raw_site=space.to_physical(state.best_site), best_raw_value=state.best_value,
        trace=state.trace, dataset=state.dataset,
        dataset_path=None if out_dir is None else out_dir / DATASET_FILE,
        trace_path=None if out_dir is None else out_dir / TRACE_FILE)


class RobustOptimizer(BaseEstimator):
    """Estimator-style front end to ``run``.

    ``fit(objective, space)`` minimises the smoothed objective; the result
    is exposed through trailing-underscore attributes.

    Parameters
    ----------
    sigma_target : float
        Target standard deviation in internal units.
    sigma_max_factor : float
        ``sigma_max = sigma_max_factor * sigma_target``.
    """

    def __init__(self, sigma_target=1.0, sigma_max_factor=10.0, gamma_pan=1.2,
                 gamma_osc=0.8, eta=0.8, beta=2.0, alpha=3.0, n0=None, k_max=100,
                 delta=3.0, n_samples=DEFAULT_SAMPLES, budget=5, workers=1, seed=0):
        self.sigma_target = sigma_target
        self.sigma_max_factor = sigma_max_factor
        self.gamma_pan = gamma_pan
        self.gamma_osc = gamma_osc
        self.eta = eta
        self.beta = beta
        self.alpha = alpha
        self.n0 = n0
        self.k_max = k_max
        self.delta = delta
        self.n_samples = n_samples
        self.budget = budget
        self.workers = workers
        self.seed = seed

    def _config(self) -> MoveLimitConfig:
        return MoveLimitConfig(
            gamma_pan=self.gamma_pan, gamma_osc=self.gamma_osc, eta=self.eta,
            beta=self.beta, alpha=self.alpha, n0=self.n0,
            sigma_target=self.sigma_target,
            sigma_max=self.sigma_max_factor * self.sigma_target,
            k_max=self.k_max, delta=self.delta)

    def fit(self, objective, space: DesignSpace, out_dir=None):
        options = RunOptions(self.n_samples, 0, self.budget, self.workers)
        report = run(self._config(), space, objective, SeededStream(self.seed),
                     options, out_dir)
        self.report_ = report
        self.x_ = report.x_star
        self.objective_ = report.final_objective
        self.sigmas_ = report.sigmas
        self.trace_ = report.trace
        self.dataset_ = report.dataset
        self.n_evaluations_ = len(report.dataset)
        return self
