"""Experiment configuration: JSON schema validation, scenario builders, hashing.

A configuration document has four top-level blocks::

    {
      "model": {"n", "T", "nt", "a0", "cbar", "qdec", "smax", "actuators",
                 "q_obs", "p_ter", "scenario"},
      "qmc":   {"method", "N" | "N_list", "s", "alpha", "R", "seed", "weight_mode"},
      "study": "riccati-check" | "oracle-check" | "qmc-rate" | "mc-rate" |
               "truncation" | "propagation" | "derivative-decay" | "points",
      "out":   "<dir>",            # optional
      "params": {...}              # optional study-specific knobs
    }

Unknown keys are rejected by name.  The two built-in scenarios fix the data
functions: "homogeneous" tracks the origin from y0(x) = sin(pi x); "tracking"
ramps the target g(t,x) = (1 - cos(pi t / T))/2 * sin(pi x) from a zero
initial state (so the shifted variable starts at zero and g_T = g(T)).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError
from .riccati import TimeGrid
from .spatial_model import (
    DiffusionField,
    OperatorFamily,
    ProblemData,
    SpatialGrid,
    assemble_family,
)

__all__ = [
    "ExperimentConfig",
    "validate_config",
    "build_family",
    "build_problem",
    "build_time_grid",
    "config_hash",
    "DEFAULT_HOMOGENEOUS",
    "DEFAULT_TRACKING",
]

_MODEL_KEYS = {
    "n": int,
    "T": (int, float),
    "nt": int,
    "a0": (int, float),
    "cbar": (int, float),
    "qdec": (int, float),
    "smax": int,
    "actuators": list,
    "q_obs": (int, float),
    "p_ter": (int, float),
    "scenario": str,
}
_QMC_KEYS = {
    "method": str,
    "N": int,
    "N_list": list,
    "s": int,
    "alpha": int,
    "R": int,
    "seed": int,
    "weight_mode": str,
}
_STUDIES = (
    "riccati-check",
    "oracle-check",
    "qmc-rate",
    "mc-rate",
    "truncation",
    "propagation",
    "derivative-decay",
    "points",
)
_METHODS = ("lattice", "shifted", "folded", "interlaced", "mc")

DEFAULT_HOMOGENEOUS = {
    "n": 64, "T": 1.0, "nt": 64, "a0": 0.02, "cbar": 0.01, "qdec": 2.0,
    "smax": 64, "actuators": [[0.1, 0.45], [0.55, 0.9]], "q_obs": 1.0,
    "p_ter": 0.1, "scenario": "homogeneous",
}
DEFAULT_TRACKING = {
    "n": 64, "T": 1.0, "nt": 64, "a0": 0.04, "cbar": 0.02, "qdec": 2.0,
    "smax": 64, "actuators": [[0.1, 0.45], [0.55, 0.9]], "q_obs": 1.0,
    "p_ter": 0.1, "scenario": "tracking",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description."""

    model: dict
    qmc: dict
    study: str
    out: str | None = None
    params: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.qmc.get("seed", 0))


def _check_block(name: str, block: Any, allowed: dict) -> dict:
    if not isinstance(block, dict):
        raise ConfigError(f"'{name}' block must be an object")
    for key, val in block.items():
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in '{name}' block")
        want = allowed[key]
        if not isinstance(val, want):
            raise ConfigError(f"key '{name}.{key}' has wrong type "
                              f"(expected {want}, got {type(val).__name__})")
    return dict(block)


def validate_config(raw: Any) -> ExperimentConfig:
    """Validate a parsed JSON document; unknown keys are rejected by name."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    allowed_top = {"model", "qmc", "study", "out", "params"}
    for key in raw:
        if key not in allowed_top:
            raise ConfigError(f"unknown key '{key}' in configuration")
    if "study" not in raw:
        raise ConfigError("missing 'study' entry")
    study = raw["study"]
    if study not in _STUDIES:
        raise ConfigError(f"unknown study kind '{study}'")
    model = _check_block("model", raw.get("model", {}), _MODEL_KEYS)
    missing = set(_MODEL_KEYS) - set(model)
    if model and missing:
        raise ConfigError(f"model block missing keys: {sorted(missing)}")
    qmc = _check_block("qmc", raw.get("qmc", {}), _QMC_KEYS)
    if "method" in qmc and qmc["method"] not in _METHODS:
        raise ConfigError(f"unknown qmc method '{qmc['method']}'")
    if model:
        if model["scenario"] not in ("homogeneous", "tracking"):
            raise ConfigError(f"unknown scenario '{model['scenario']}'")
        for iv in model["actuators"]:
            if (not isinstance(iv, list) or len(iv) != 2
                    or not all(isinstance(v, (int, float)) for v in iv)):
                raise ConfigError("actuators must be [lo, hi] number pairs")
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("'out' must be a string path")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("'params' must be an object")
    return ExperimentConfig(model=model, qmc=qmc, study=study, out=out,
                            params=dict(params))


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of the whole configuration (cache keys, CSV headers)."""
    doc = {"model": cfg.model, "qmc": cfg.qmc, "study": cfg.study,
           "params": cfg.params}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_family(model: dict) -> OperatorFamily:
    grid = SpatialGrid(int(model["n"]))
    fld = DiffusionField(a0=float(model["a0"]), cbar=float(model["cbar"]),
                         qdec=float(model["qdec"]), smax=int(model["smax"]))
    actuators = [tuple(map(float, iv)) for iv in model["actuators"]]
    return assemble_family(grid, fld, actuators, float(model["q_obs"]),
                           float(model["p_ter"]))


def build_problem(fam: OperatorFamily, model: dict) -> ProblemData:
    """Scenario data functions on the family's grid."""
    T = float(model["T"])
    x = fam.grid.nodes
    z = np.zeros(fam.n)
    if model["scenario"] == "homogeneous":
        y0 = np.sin(np.pi * x)
        return ProblemData(T=T, f=lambda t: z, g=lambda t: z, gdot=lambda t: z,
                           gT=z, y0=y0)
    ghat = np.sin(np.pi * x)

    def g(t: float) -> np.ndarray:
        return 0.5 * (1.0 - math.cos(math.pi * t / T)) * ghat

    def gdot(t: float) -> np.ndarray:
        return 0.5 * (math.pi / T) * math.sin(math.pi * t / T) * ghat

    return ProblemData(T=T, f=lambda t: z, g=g, gdot=gdot, gT=g(T), y0=z)


def build_time_grid(model: dict) -> TimeGrid:
    return TimeGrid(nt=int(model["nt"]), T=float(model["T"]))
