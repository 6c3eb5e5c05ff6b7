"""Quantity-of-interest providers.

Every objective maps a physical design vector to a float. Built-in
objectives are pure functions; ``ExternalObjective`` runs a child process.
Failures raise ``EvaluationError``; the failure policy decides whether the
optimizer aborts or records a penalty value instead.
"""

from __future__ import annotations

import math
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .io import fmt


class EvaluationError(RuntimeError):
    """An objective could not produce a finite value."""


def herbie_step(x, step_height: float = 0.5, step_location: float = 0.0) -> np.ndarray:
    """Herbie product with an additive step along the first axis.

    ``x`` may be a single vector ``(d,)`` or a batch ``(n, d)``.
    """
    x = np.asarray(x, dtype=float)
    terms = (np.exp(-(x - 1.0) ** 2) + np.exp(-0.8 * (x + 1.0) ** 2)
             - 0.05 * np.sin(8.0 * (x + 0.1)))
    out = -np.prod(terms, axis=-1)
    return out + step_height * (x[..., 0] > step_location)


def unit_step(x, location: float = 0.0, height: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return height * (x[..., 0] > location).astype(float)


def quadratic(x, A, b, c: float = 0.0) -> np.ndarray:
    """``x.A.x + b.x + c`` for a vector or a batch of row vectors."""
    x = np.asarray(x, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape != (x.shape[-1], x.shape[-1]) or b.shape != (x.shape[-1],):
        raise ValueError("dimension mismatch between x, A and b")
    return np.einsum("...i,ij,...j->...", x, A, x) + x @ b + c


def quadratic_gradient(x, A, b) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return np.asarray(x, dtype=float) @ (A + A.T) + np.asarray(b, dtype=float)


class Objective:
    """Base class: scalar ``__call__`` plus a batch ``evaluate_many``.

    Attributes
    ----------
    penalty : float or None
        Value recorded when evaluation fails; ``None`` means abort.
    """

    penalty = None

    def __call__(self, x) -> float:
        raise NotImplementedError

    def evaluate_many(self, X) -> np.ndarray:
        return np.array([self(x) for x in np.atleast_2d(X)])


class FunctionObjective(Objective):
    """Wrap a vectorised function ``f(X) -> values``."""

    def __init__(self, func, **params):
        self.func = func
        self.params = params

    def __call__(self, x) -> float:
        value = float(self.func(np.asarray(x, dtype=float), **self.params))
        if not math.isfinite(value):
            raise EvaluationError(f"non-finite objective value {value!r}")
        return value

    def evaluate_many(self, X) -> np.ndarray:
        return np.asarray(self.func(np.atleast_2d(np.asarray(X, dtype=float)), **self.params),
                          dtype=float)


@dataclass
class ExternalObjective(Objective):
    """Line protocol: the design goes to stdin as space-separated decimals
    (17 significant digits); one decimal number is read from stdout."""

    command: list
    timeout: float = 60.0
    penalty: float | None = None

    def __call__(self, x) -> float:
        line = " ".join(fmt(v) for v in np.atleast_1d(x)) + "\n"
        try:
            proc = subprocess.run(self.command, input=line, capture_output=True,
                                  text=True, timeout=self.timeout)
        except subprocess.TimeoutExpired as exc:
            raise EvaluationError(f"external objective timed out after {self.timeout} s") from exc
        except OSError as exc:
            raise EvaluationError(f"cannot launch external objective: {exc}") from exc
        if proc.returncode != 0:
            raise EvaluationError(f"external objective exited with status {proc.returncode}")
        tokens = proc.stdout.split()
        if len(tokens) != 1:
            raise EvaluationError(f"expected one number on stdout, got {proc.stdout!r}")
        try:
            value = float(tokens[0])
        except ValueError as exc:
            raise EvaluationError(f"unparsable objective output {tokens[0]!r}") from exc
        if not math.isfinite(value):
            raise EvaluationError(f"non-finite objective value {tokens[0]!r}")
        return value


def evaluate_design(objective, x):
    """Evaluate one design under the objective's failure policy.

    Returns ``(value, failed)``; re-raises when no penalty is configured.
    """
    try:
        value = float(objective(x))
        if not math.isfinite(value):
            raise EvaluationError(f"non-finite objective value {value!r}")
        return value, False
    except EvaluationError:
        penalty = getattr(objective, "penalty", None)
        if penalty is None:
            raise
        return float(penalty), True


OBJECTIVE_KINDS = ("herbie_step", "quadratic", "step", "external", "cohesive_chain")


@dataclass
class ObjectiveSpec:
    kind: str
    parameters: dict = field(default_factory=dict)
    failure_policy: str = "abort"
    penalty: float | None = None

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.failure_policy not in ("abort", "penalty"):
            raise ValueError("failure_policy must be 'abort' or 'penalty'")
        if self.failure_policy == "penalty":
            if self.penalty is None or not math.isfinite(self.penalty):
                raise ValueError("penalty policy needs a finite penalty value")

    def build(self, dim: int) -> Objective:
        p = dict(self.parameters)
        if self.kind == "herbie_step":
            obj = FunctionObjective(herbie_step, step_height=p.get("step_height", 0.5),
                                    step_location=p.get("step_location", 0.0))
        elif self.kind == "step":
            obj = FunctionObjective(unit_step, location=p.get("location", 0.0),
                                    height=p.get("height", 1.0))
        elif self.kind == "quadratic":
            A = np.asarray(p.get("A", np.eye(dim).ravel()), dtype=float).reshape(dim, dim)
            if not np.allclose(A, A.T):
                raise ValueError("quadratic objective needs a symmetric A")
            b = np.asarray(p.get("b", np.zeros(dim)), dtype=float).reshape(dim)
            obj = FunctionObjective(quadratic, A=A, b=b, c=float(p.get("c", 0.0)))
        elif self.kind == "external":
            if not p.get("command"):
                raise ValueError("external objective needs a command")
            obj = ExternalObjective(list(p["command"]), float(p.get("timeout", 60.0)))
        else:
            from .cohesive import ChainObjective
            obj = ChainObjective.from_parameters(p, dim)
        obj.penalty = self.penalty if self.failure_policy == "penalty" else None
        return obj
