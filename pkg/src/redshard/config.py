"""Experiment configuration: JSON schema, parsing and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import jsonschema

from .distributions import parse_dist
from .exceptions import ConfigError, InvalidSpec
from .policies import canonical_id
from .workload import WorkloadSpec, parse_workload

_DIST = {
    "type": "object",
    "required": ["kind", "mu"],
    "properties": {
        "kind": {"enum": ["exponential", "shifted_exp", "exp_mixture"]},
        "mu": {"type": "number", "exclusiveMinimum": 0},
        "shift_frac": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "components": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
        },
    },
}

_POLICY = {
    "oneOf": [
        {"type": "string"},
        {
            "type": "object",
            "required": ["id"],
            "properties": {
                "id": {"type": "string"},
                "params": {"type": "object"},
                "pad": {"type": "boolean"},
                "label": {"type": "string"},
            },
            "additionalProperties": False,
        },
    ]
}

SCHEMA = {
    "type": "object",
    "required": ["workload", "sim", "sweep"],
    "properties": {
        "workload": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["stochastic", "explicit"]},
                "N": {"type": "integer", "minimum": 1},
                "lambda": {"type": "number", "minimum": 0},
                "arrival_mixture": {"type": "array", "minItems": 1},
                "code_mix": {"type": "array", "minItems": 1},
                "requests": {"type": "array"},
            },
        },
        "sim": {
            "type": "object",
            "required": ["L", "dist"],
            "properties": {
                "L": {"type": "integer", "minimum": 1},
                "dist": _DIST,
                "max_events": {"type": "integer", "minimum": 1},
            },
        },
        "sweep": {
            "type": "object",
            "required": ["rho_grid", "policies"],
            "properties": {
                "rho_grid": {"type": "array", "items": {"type": "number"}},
                "policies": {"type": "array", "minItems": 1, "items": _POLICY},
                "rho_variant": {"enum": ["chunk_rate", "min_based"]},
            },
        },
        "bounds": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["setting"],
                "properties": {"setting": {"type": "string"}, "d_min": {"type": "integer", "minimum": 1}},
            },
        },
        "reps": {"type": "integer"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output": {"type": "string"},
        "resample_arrivals": {"type": "boolean"},
    },
}


@dataclass
class PolicyEntry:
    id: str
    params: dict = field(default_factory=dict)
    pad: bool = False
    label: str = ""

    @property
    def name(self):
        return self.label or (self.id + ("_padded" if self.pad else ""))


@dataclass
class ExperimentConfig:
    workload: WorkloadSpec
    L: int
    dist: object
    rho_grid: tuple
    policies: tuple
    rho_variant: str = "chunk_rate"
    bounds: tuple = ()
    reps: int = 50
    seed: int = 0
    output: str | None = None
    resample_arrivals: bool = True
    max_events: int = 50_000_000
    raw: dict = field(default_factory=dict, repr=False)


def _field_of(err):
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def parse_config(data):
    """Validate a config mapping and build an :class:`ExperimentConfig`."""
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(_field_of(err), err.message) from None
    sweep = data["sweep"]
    grid = tuple(float(x) for x in sweep["rho_grid"])
    if not grid:
        raise ConfigError("sweep.rho_grid", "must not be empty")
    if any(not 0 < r < 1 for r in grid):
        raise ConfigError("sweep.rho_grid", "values must lie in (0, 1)")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("sweep.rho_grid", "must be strictly increasing")
    reps = data.get("reps", 50)
    if reps < 2:
        raise ConfigError("reps", "must be >= 2")
    pols = []
    for i, p in enumerate(sweep["policies"]):
        entry = PolicyEntry(p) if isinstance(p, str) else PolicyEntry(p["id"], p.get("params", {}), p.get("pad", False), p.get("label", ""))
        try:
            entry.id = canonical_id(entry.id)
        except InvalidSpec as exc:
            raise ConfigError(f"sweep.policies.{i}", str(exc)) from None
        pols.append(entry)
    try:
        workload = parse_workload(data["workload"])
    except InvalidSpec as exc:
        raise ConfigError("workload", str(exc)) from None
    try:
        dist = parse_dist(data["sim"]["dist"])
    except InvalidSpec as exc:
        raise ConfigError("sim.dist", str(exc)) from None
    return ExperimentConfig(
        workload=workload,
        L=data["sim"]["L"],
        dist=dist,
        rho_grid=grid,
        policies=tuple(pols),
        rho_variant=sweep.get("rho_variant", "chunk_rate"),
        bounds=tuple(data.get("bounds", ())),
        reps=reps,
        seed=data.get("seed", 0),
        output=data.get("output"),
        resample_arrivals=data.get("resample_arrivals", True),
        max_events=data["sim"].get("max_events", 50_000_000),
        raw=data,
    )


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    return parse_config(data)
