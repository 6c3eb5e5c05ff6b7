"""INI run configuration: parsing, validation, overrides and echo."""

from __future__ import annotations

import configparser
import math
import shlex
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .design_space import DesignSpace
from .io import atomic_write_text, fmt
from .objectives import OBJECTIVE_KINDS, ObjectiveSpec
from .optimizer import MoveLimitConfig, RunOptions


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


_CHAIN_KEYS = {"n_nodes": int, "k_bend": float, "length": float, "precrack": int,
               "T": float, "n_steps": int, "phi_n": float, "phi_s": float, "r": float,
               "delta_n_star": float, "delta_s_star": float, "rigid_interface": "bool"}

OBJECTIVE_KEYS = {
    "herbie_step": {"step_height": float, "step_location": float},
    "step": {"location": float, "height": float},
    "quadratic": {"A": "vector", "b": "vector", "c": float},
    "external": {"command": "command", "timeout": float},
    "cohesive_chain": _CHAIN_KEYS,
}
_OBJECTIVE_COMMON = {"kind", "failure_policy", "penalty"}

DEFAULTS = {
    "design": {"lower": "-2", "upper": "2", "periodic": "false", "sigma": "0.2"},
    "optimizer": {"gamma_pan": "1.2", "gamma_osc": "0.8", "eta": "0.8", "beta": "2",
                  "alpha": "3", "n0": "auto", "sigma_max_ratio": "10", "k_max": "100",
                  "delta": "3", "budget": "5"},
    "smoothing": {"n_samples": "65536", "skip": "0"},
    "objective": {"kind": "herbie_step", "failure_policy": "abort", "penalty": "none"},
    "execution": {"seed": "0", "workers": "1", "runs": "1", "out": "runs"},
}


def _vector(text: str) -> np.ndarray:
    parts = text.replace(",", " ").split()
    if not parts:
        raise ConfigError("empty vector")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ConfigError(f"malformed number list {text!r}") from exc


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _bools(text: str) -> np.ndarray:
    return np.array([_bool(p) for p in text.replace(",", " ").split()])


def _broadcast(v: np.ndarray, d: int, name: str) -> np.ndarray:
    if v.size == 1:
        return np.repeat(v, d)
    if v.size != d:
        raise ConfigError(f"[design] {name} has {v.size} entries, expected {d}")
    return v


@dataclass
class RunConfig:
    space: DesignSpace
    sigma_target: np.ndarray  # physical units
    move_limit: MoveLimitConfig
    options: RunOptions
    objective: ObjectiveSpec
    seed: int
    workers: int
    runs: int
    out: Path
    parser: configparser.ConfigParser

    @property
    def dim(self) -> int:
        return self.space.dim

    def echo(self) -> str:
        """Effective configuration with every default spelled out."""
        lines = []
        for section in self.parser.sections():
            lines.append(f"[{section}]")
            for key, value in self.parser.items(section):
                lines.append(f"{key} = {value}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path) -> None:
        atomic_write_text(path, self.echo())


def _new_parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(interpolation=None)
    p.optionxform = str  # keys are case-sensitive (e.g. A, T)
    return p


def read_config(path=None, overrides=(), text: str | None = None) -> RunConfig:
    """Load, apply ``section.key=value`` overrides and validate."""
    raw = _new_parser()
    try:
        if text is not None:
            raw.read_string(text)
        elif path is not None:
            with open(path) as fh:
                raw.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from exc
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if not raw.has_section(section):
            raw.add_section(section)
        raw.set(section, key.strip(), value.strip())

    merged = _new_parser()
    for section, values in DEFAULTS.items():
        merged.add_section(section)
        for k, v in values.items():
            merged.set(section, k, v)
    for section in raw.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        for k, v in raw.items(section):
            merged.set(section, k, v)
    return _validate(merged)


def _validate(p: configparser.ConfigParser) -> RunConfig:
    kind = p.get("objective", "kind")
    if kind not in OBJECTIVE_KINDS:
        raise ConfigError(f"[objective] kind must be one of {OBJECTIVE_KINDS}")
    allowed = {s: set(v) for s, v in DEFAULTS.items()}
    allowed["objective"] = _OBJECTIVE_COMMON | set(OBJECTIVE_KEYS[kind])
    for section in p.sections():
        for key in p.options(section):
            if key not in allowed[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")

    try:
        lower = _vector(p.get("design", "lower"))
        upper = _vector(p.get("design", "upper"))
        d = max(lower.size, upper.size)
        lower, upper = _broadcast(lower, d, "lower"), _broadcast(upper, d, "upper")
        periodic = _bools(p.get("design", "periodic"))
        periodic = np.repeat(periodic, d) if periodic.size == 1 else periodic
        if periodic.size != d:
            raise ConfigError("[design] periodic has the wrong length")
        sigma = _broadcast(_vector(p.get("design", "sigma")), d, "sigma")
        space = DesignSpace.from_sigmas(lower, upper, sigma, periodic)

        o = dict(p.items("optimizer"))
        n0 = None if o["n0"].strip().lower() == "auto" else int(o["n0"])
        ratio = float(o["sigma_max_ratio"])
        move = MoveLimitConfig(
            gamma_pan=float(o["gamma_pan"]), gamma_osc=float(o["gamma_osc"]),
            eta=float(o["eta"]), beta=float(o["beta"]), alpha=float(o["alpha"]), n0=n0,
            sigma_target=1.0, sigma_max=ratio, k_max=int(o["k_max"]),
            delta=float(o["delta"]))
        budget = int(o["budget"])
        if budget < 1:
            raise ConfigError("[optimizer] budget must be >= 1")
        n_samples = int(p.get("smoothing", "n_samples"))
        skip = int(p.get("smoothing", "skip"))
        if n_samples < 2 or skip < 0:
            raise ConfigError("[smoothing] needs n_samples >= 2 and skip >= 0")

        seed = int(p.get("execution", "seed"))
        workers = int(p.get("execution", "workers"))
        runs = int(p.get("execution", "runs"))
        if workers < 1 or runs < 1 or seed < 0:
            raise ConfigError("[execution] needs workers >= 1, runs >= 1, seed >= 0")
        options = RunOptions(n_samples, skip, budget, workers)

        spec = _objective_spec(p, kind, d)
        spec.build(d)  # surfaces parameter errors at load time
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(space, sigma, move, options, spec, seed, workers, runs,
                     Path(p.get("execution", "out")), p)


def _objective_spec(p, kind: str, d: int) -> ObjectiveSpec:
    sec = dict(p.items("objective"))
    params = {}
    for key, typ in OBJECTIVE_KEYS[kind].items():
        if key not in sec:
            continue
        text = sec[key]
        if typ == "vector":
            params[key] = _vector(text)
        elif typ == "command":
            params[key] = shlex.split(text)
        elif typ == "bool":
            params[key] = _bool(text)
        else:
            params[key] = typ(text)
    penalty_text = sec.get("penalty", "none").strip().lower()
    penalty = None if penalty_text == "none" else float(penalty_text)
    if penalty is not None and not math.isfinite(penalty):
        raise ConfigError("[objective] penalty must be finite")
    return ObjectiveSpec(kind, params, sec.get("failure_policy", "abort"), penalty)


def default_config_text(**sections) -> str:
    """INI text built from ``DEFAULTS`` updated with ``section={key: value}``."""
    p = _new_parser()
    for section, values in DEFAULTS.items():
        p.add_section(section)
        for k, v in values.items():
            p.set(section, k, v)
    for section, values in sections.items():
        for k, v in values.items():
            p.set(section, k, v if isinstance(v, str) else fmt(v))
    return "\n".join(f"[{s}]\n" + "".join(f"{k} = {v}\n" for k, v in p.items(s))
                     for s in p.sections())


__all__ = ["ConfigError", "RunConfig", "read_config", "default_config_text", "DEFAULTS"]
