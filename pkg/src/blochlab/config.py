"""Run configuration: a single JSON file validated against a closed schema."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import BlochLabError, ConfigError
from .lattice import PeriodTower, make_period_tower
from .potential import PeriodicPotential, layer_from_json

_INT_VEC = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
_LAYER = {
    "type": "object",
    "properties": {
        "period": _INT_VEC,
        "cell": {"type": "array", "items": {"type": "number"}},
        "coeffs": {
            "type": "array",
            "items": {
                "type": "array",
                "prefixItems": [{"type": "array", "items": {"type": "integer"}}, {"type": "number"},
                                {"type": "number"}],
                "minItems": 3,
                "maxItems": 3,
            },
        },
    },
    "required": ["period"],
    "additionalProperties": False,
}
_RES = {"oneOf": [{"type": "integer", "minimum": 2}, {"type": "array", "items": {"type": "integer", "minimum": 2}}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "dimension": {"type": "integer", "minimum": 1},
        "tower": {"type": "array", "items": _INT_VEC, "minItems": 1},
        "layers": {"type": "array", "items": _LAYER, "minItems": 1},
        "resolution": _RES,
        "torus_points": {"type": "integer", "minimum": 2},
        "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "eta_schedule": {"type": "array", "items": {"type": ["number", "null"]}},
        "bins": {"type": "integer", "minimum": 1},
        "box_radius": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "cartan_eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        "cartan_points": {"type": "integer", "minimum": 1024},
        "vector": {
            "type": "array",
            "items": {
                "type": "array",
                "prefixItems": [{"type": "array", "items": {"type": "integer"}}, {"type": "number"},
                                {"type": "number"}],
                "minItems": 3,
                "maxItems": 3,
            },
        },
        "measure_set": {"enum": ["full", "chain"]},
        "measure_method": {"enum": ["linear", "sample"]},
        "chain_point": {
            "type": "object",
            "properties": {"x": {"type": "array", "items": {"type": "number"}}, "band": {"type": "integer", "minimum": 1}},
            "required": ["x", "band"],
            "additionalProperties": False,
        },
        "output": {"type": "string"},
        "tolerances": {
            "type": "object",
            "properties": {
                "residual": {"type": "number", "exclusiveMinimum": 0},
                "measure_slack": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "required": ["layers"],
    "additionalProperties": False,
}

DEFAULTS = {
    "resolution": 1024,
    "torus_points": 4096,
    "eta": 0.2,
    "bins": 256,
    "box_radius": 50,
    "seed": 0,
    "cartan_eps": [0.1, 0.01],
    "cartan_points": 100000,
    "measure_set": "chain",
    "measure_method": "linear",
    "tolerances": {"residual": 1e-8, "measure_slack": 1e-6},
}


@dataclass(frozen=True, eq=False)
class RunConfig:
    raw: dict
    layers: tuple[PeriodicPotential, ...]
    tower: PeriodTower
    settings: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.tower.d

    def get(self, key):
        return self.settings[key]

    @property
    def tolerances(self) -> dict:
        tol = dict(DEFAULTS["tolerances"])
        tol.update(self.raw.get("tolerances", {}))
        return tol


def parse(data: dict) -> RunConfig:
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message} at {list(exc.absolute_path)}") from exc
    try:
        layers = tuple(layer_from_json(spec) for spec in data["layers"])
        tower = make_period_tower([layer.period for layer in layers])
    except BlochLabError as exc:
        raise ConfigError(f"invalid layers: {exc}") from exc
    if "tower" in data and [list(p) for p in data["tower"]] != [list(p.components) for p in tower]:
        raise ConfigError("'tower' does not match the layer periods")
    if "dimension" in data and data["dimension"] != tower.d:
        raise ConfigError(f"dimension {data['dimension']} does not match layers ({tower.d})")
    settings = {k: data.get(k, v) for k, v in DEFAULTS.items() if k != "tolerances"}
    res = settings["resolution"]
    if isinstance(res, list) and len(res) != tower.d:
        raise ConfigError("resolution has the wrong number of axes")
    pts = settings["torus_points"]
    for p in tower[-1]:
        if pts % p:
            raise ConfigError(f"torus_points {pts} is not a multiple of the final period component {p}")
    settings["eta_schedule"] = data.get("eta_schedule", [])
    settings["vector"] = data.get("vector")
    settings["chain_point"] = data.get("chain_point")
    settings["output"] = data.get("output")
    return RunConfig(data, layers, tower, settings)


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse(data)


def shipped(name: str) -> RunConfig:
    """One of the configs bundled with the package, e.g. ``demo_two_stage``."""
    text = resources.files("blochlab").joinpath("configs", f"{name}.json").read_text()
    return parse(json.loads(text))


def shipped_path(name: str) -> Path:
    return Path(str(resources.files("blochlab").joinpath("configs", f"{name}.json")))
