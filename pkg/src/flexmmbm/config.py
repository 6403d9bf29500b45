"""JSON experiment configuration: schema, parsing and serialization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import MmbmError
from .flexible import FlexibleModel
from .model import MmbmParams
from .simulator import SimConfig

SCHEMA_VERSION = 1
OUTPUTS = ("cdf", "percentiles", "excursions", "passage", "up_fraction")

_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_vector = {"type": "array", "minItems": 1, "items": {"type": "number"}}

_leg = {
    "type": "object",
    "properties": {"Q": _matrix, "mu": _vector, "sigma": _vector, "sigma2": _vector},
    "required": ["Q", "mu"],
    "oneOf": [{"required": ["sigma"]}, {"required": ["sigma2"]}],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "model": {
            "type": "object",
            "properties": {
                "b": {"type": "number", "exclusiveMinimum": 0},
                "up": _leg,
                "down": _leg,
                "P_ud": _matrix,
                "P_du": _matrix,
            },
            "required": ["b", "up", "down"],
            "additionalProperties": False,
        },
        "grid": {
            "oneOf": [
                _vector,
                {
                    "type": "object",
                    "properties": {
                        "count": {"type": "integer", "minimum": 2},
                        "spacing": {"enum": ["uniform"]},
                    },
                    "required": ["count"],
                    "additionalProperties": False,
                },
            ]
        },
        "outputs": {"type": "array", "items": {"enum": list(OUTPUTS)}, "uniqueItems": True},
        "percentiles": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "sim": {
            "type": "object",
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "n_cycles": {"type": "integer", "minimum": 1},
                "replications": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "warmup_cycles": {"type": "integer", "minimum": 0},
                "batches": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "validate": {
            "type": "object",
            "properties": {
                "lambdas": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
                "x": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "required": ["schema_version", "model"],
    "additionalProperties": False,
}


class ConfigError(MmbmError, ValueError):
    """Unreadable, schema-invalid or semantically invalid configuration."""


@dataclass
class ExperimentConfig:
    model: FlexibleModel
    name: str = "experiment"
    grid: np.ndarray | None = None
    outputs: tuple = OUTPUTS
    percentiles: tuple = (0.5, 0.9)
    sim: SimConfig | None = None
    lambdas: tuple | None = None
    validate_x: float | None = None
    raw: dict = field(default_factory=dict)

    def grid_points(self, count: int | None = None) -> np.ndarray:
        if count is not None:
            return np.linspace(0.0, self.model.b, int(count))
        if self.grid is not None:
            return self.grid
        return np.linspace(0.0, self.model.b, 41)


def leg_to_dict(p: MmbmParams) -> dict:
    return {"Q": p.Q.tolist(), "mu": p.mu.tolist(), "sigma": p.sigma.tolist()}


def leg_from_dict(d: dict) -> MmbmParams:
    if "sigma" in d:
        return MmbmParams(np.array(d["Q"], dtype=float), d["mu"], d["sigma"])
    return MmbmParams.from_variance(np.array(d["Q"], dtype=float), d["mu"], d["sigma2"])


def model_to_dict(model: FlexibleModel) -> dict:
    return {
        "b": model.b,
        "up": leg_to_dict(model.up),
        "down": leg_to_dict(model.down),
        "P_ud": np.asarray(model.P_ud).tolist(),
        "P_du": np.asarray(model.P_du).tolist(),
    }


def model_from_dict(d: dict) -> FlexibleModel:
    up = leg_from_dict(d["up"])
    down = leg_from_dict(d["down"])
    if ("P_ud" in d) != ("P_du" in d):
        raise ConfigError("model: give both P_ud and P_du or neither")
    if "P_ud" not in d:
        if up.m != down.m:
            raise ConfigError("model: switching matrices are required when the legs differ in size")
        return FlexibleModel.symmetric(d["b"], up, down)
    return FlexibleModel(d["b"], up, down, np.array(d["P_ud"], dtype=float), np.array(d["P_du"], dtype=float))


def _path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def parse_config(data: dict) -> ExperimentConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"field {_path(e)}: {e.message}" for e in errors]
        raise ConfigError("configuration does not match the schema:\n  " + "\n  ".join(lines))
    try:
        model = model_from_dict(data["model"])
    except ConfigError:
        raise
    except (MmbmError, ValueError) as exc:
        raise ConfigError(f"field model: {exc}") from exc
    grid = None
    g = data.get("grid")
    if isinstance(g, list):
        grid = np.array(g, dtype=float)
        if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > model.b:
            raise ConfigError("field grid: values must be strictly increasing within [0, b]")
    elif isinstance(g, dict):
        grid = np.linspace(0.0, model.b, g["count"])
    sim = None
    if "sim" in data:
        try:
            sim = SimConfig(**data["sim"])
        except (MmbmError, ValueError) as exc:
            raise ConfigError(f"field sim: {exc}") from exc
    lambdas = x = None
    if "validate" in data:
        lambdas = tuple(data["validate"].get("lambdas", (1e2, 1e3, 1e4)))
        x = data["validate"].get("x")
        if x is not None and x > model.b:
            raise ConfigError("field validate/x: must lie within [0, b]")
    return ExperimentConfig(
        model=model,
        name=data.get("name", "experiment"),
        grid=grid,
        outputs=tuple(data.get("outputs", OUTPUTS)),
        percentiles=tuple(data.get("percentiles", (0.5, 0.9))),
        sim=sim,
        lambdas=lambdas,
        validate_x=x,
        raw=data,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "name": cfg.name, "model": model_to_dict(cfg.model)}
    if cfg.grid is not None:
        out["grid"] = cfg.grid.tolist()
    out["outputs"] = list(cfg.outputs)
    out["percentiles"] = list(cfg.percentiles)
    if cfg.sim is not None:
        s = cfg.sim
        out["sim"] = {
            "dt": s.dt, "n_cycles": s.n_cycles, "replications": s.replications,
            "seed": s.seed, "warmup_cycles": s.warmup_cycles, "batches": s.batches,
        }
    if cfg.lambdas is not None:
        out["validate"] = {"lambdas": list(cfg.lambdas)}
        if cfg.validate_x is not None:
            out["validate"]["x"] = cfg.validate_x
    return out


def bundled_dir():
    return resources.files("flexmmbm") / "data"


def bundled_config_names() -> list:
    return sorted(p.name[:-5] for p in (bundled_dir() / "configs").iterdir() if p.name.endswith(".json"))


def bundled_config_path(name: str):
    return bundled_dir() / "configs" / f"{name}.json"


def load_bundled(name: str) -> ExperimentConfig:
    p = bundled_config_path(name)
    return load_config(Path(str(p)))


def load_expected() -> list:
    return json.loads((bundled_dir() / "expected.json").read_text())["entries"]
