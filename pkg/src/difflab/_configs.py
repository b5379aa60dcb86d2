"""Run-config schemas, loading and builders shared by the CLI and verify."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .categorical import MAX_ALPHABET, NoiseDistribution
from .models import DiscreteConfig
from .schedule import FAMILIES, NoiseSchedule
from .sde import MixtureDensity

BUILTIN_PREFIX = "builtin:"


class ConfigError(ValueError):
    """Bad or missing configuration; the CLI maps it to exit code 2."""


_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_SCHEDULE = {
    "type": "object",
    "properties": {
        "family": {"enum": list(FAMILIES)},
        "params": {"type": "object", "additionalProperties": _NUM},
        "clip_eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
    },
    "required": ["family"],
    "additionalProperties": False,
}
_KERNEL = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["uniform", "mask", "mixture"]},
        "K": {"type": "integer", "minimum": 2, "maximum": MAX_ALPHABET - 1},
        "with_mask": {"type": "boolean"},
        "w_uniform": {"type": "number", "minimum": 0},
        "w_mask": {"type": "number", "minimum": 0},
    },
    "required": ["kind", "K"],
    "additionalProperties": False,
}
_MIXTURE = {
    "type": "object",
    "properties": {
        "weights": {"type": "array", "items": _NUM, "minItems": 1},
        "means": {"type": "array", "items": _NUM, "minItems": 1},
        "variances": {"type": "array", "items": _NUM, "minItems": 1},
    },
    "required": ["weights", "means", "variances"],
    "additionalProperties": False,
}


def _outputs(*names):
    return {"type": "object", "properties": {n: {"type": "string"} for n in names}, "additionalProperties": False}


def _tolerances(*names):
    return {"type": "object", "properties": {n: {"type": "number", "exclusiveMinimum": 0} for n in names},
            "additionalProperties": False}


SCHEMAS = {
    "simulate": {
        "type": "object",
        "properties": {
            "space": {"enum": ["discrete", "continuous"]},
            "direction": {"enum": ["forward", "reverse"]},
            "kernel": _KERNEL,
            "schedule": _SCHEDULE,
            "dims": _POS_INT,
            "x0": {"oneOf": [_NUM, {"type": "array", "items": {"type": "integer", "minimum": 0}}]},
            "marginals": {"type": "array", "items": {"type": "array", "items": {"type": "number", "minimum": 0}}},
            "data": _MIXTURE,
            "horizon": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "steps": {"type": "integer"},
            "t_min": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "paths": _POS_INT,
            "trace_paths": {"type": "integer", "minimum": 0},
            "seed": {"type": "integer", "minimum": 0},
            "tolerances": _tolerances("ks", "z", "p_value"),
            "outputs": _outputs("trace", "summary"),
        },
        "required": ["space", "direction"],
        "additionalProperties": False,
    },
    "train": {
        "type": "object",
        "properties": {
            "dims": _POS_INT,
            "kernel": _KERNEL,
            "schedule": _SCHEDULE,
            "q_data": {"type": "array"},
            "epochs": {"type": "integer", "minimum": 0},
            "lr": {"type": "number", "exclusiveMinimum": 0},
            "bins": _POS_INT,
            "seed": {"type": "integer", "minimum": 0},
            "check_elbo": {"type": "boolean"},
            "tolerances": _tolerances("tv"),
            "outputs": _outputs("report", "model"),
        },
        "required": ["dims", "kernel", "q_data"],
        "additionalProperties": False,
    },
    "likelihood": {
        "type": "object",
        "properties": {
            "data": _MIXTURE,
            "schedule": _SCHEDULE,
            "points": {"oneOf": [
                {"type": "array", "items": _NUM, "minItems": 1},
                {"type": "object", "properties": {"grid": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}},
                 "required": ["grid"], "additionalProperties": False},
            ]},
            "steps": {"type": "integer"},
            "tolerances": _tolerances("abs_error"),
            "outputs": _outputs("csv", "summary"),
        },
        "required": ["data", "points"],
        "additionalProperties": False,
    },
    "report": {
        "type": "object",
        "properties": {
            "kind": {"enum": ["convergence", "schedule", "transition"]},
            "T_list": {"type": "array", "items": _POS_INT, "minItems": 2},
            "grid": {"type": "integer", "minimum": 2},
            "kernel": _KERNEL,
            "alpha": {"type": "number", "minimum": 0, "maximum": 1},
            "seed": {"type": "integer", "minimum": 0},
            "outputs": _outputs("csv"),
        },
        "required": ["kind"],
        "additionalProperties": False,
    },
}


def read_config(spec: str):
    """Load a JSON config from a path or a ``builtin:<name>`` reference."""
    if spec.startswith(BUILTIN_PREFIX):
        name = spec[len(BUILTIN_PREFIX):]
        res = resources.files("difflab") / "configs" / f"{name}.json"
        if not res.is_file():
            raise ConfigError(f"no bundled config named {name!r}; available: {', '.join(builtin_names())}")
        text = res.read_text()
        origin = spec
    else:
        path = Path(spec)
        if not path.is_file():
            raise ConfigError(f"config file not found: {spec}")
        text = path.read_text()
        origin = str(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{origin} is not valid JSON: {exc}") from exc


def builtin_names():
    root = resources.files("difflab") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def validate(command: str, cfg):
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid {command} config at {where}: {exc.message}") from None
    return cfg


def load(command: str, spec: str):
    return validate(command, read_config(spec))


def schedule_of(cfg, default="linear-alpha"):
    obj = cfg.get("schedule", {"family": default})
    try:
        return NoiseSchedule.from_json(obj)
    except ValueError as exc:
        raise ConfigError(f"invalid schedule: {exc}") from None


def noise_of(cfg):
    obj = cfg.get("kernel")
    if obj is None:
        raise ConfigError("config needs a 'kernel' entry")
    if obj["kind"] == "mixture" and not {"w_uniform", "w_mask"} <= set(obj):
        raise ConfigError("mixture kernel needs w_uniform and w_mask")
    try:
        return NoiseDistribution.from_json(obj)
    except ValueError as exc:
        raise ConfigError(f"invalid kernel: {exc}") from None


def mixture_of(obj):
    try:
        return MixtureDensity(tuple(obj["weights"]), tuple(obj["means"]), tuple(obj["variances"]))
    except ValueError as exc:
        raise ConfigError(f"invalid mixture: {exc}") from None


def discrete_config(cfg):
    try:
        return DiscreteConfig(schedule_of(cfg), noise_of(cfg), int(cfg["dims"]))
    except MemoryError as exc:
        raise ConfigError(str(exc)) from None


def data_law(dcfg: DiscreteConfig, weights):
    """Embed nonnegative weights over data sequences into the full state space.

    ``weights`` is a nested list of shape (K,)*d; it is normalised here.
    """
    w = np.asarray(weights, dtype=float)
    shape = (dcfg.K,) * dcfg.d
    if w.shape != shape:
        raise ConfigError(f"q_data must have shape {list(shape)} over data symbols, got {list(w.shape)}")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ConfigError("q_data weights must be finite, nonnegative and not all zero")
    q = np.zeros(dcfg.N)
    data = dcfg.states[dcfg.data_mask]
    q[np.flatnonzero(dcfg.data_mask)] = w[tuple(data.T)]
    return q / q.sum()


def toy_train():
    """(DiscreteConfig, q_data, raw config) for the bundled training example."""
    raw = load("train", BUILTIN_PREFIX + "toy_train")
    dcfg = discrete_config(raw)
    return dcfg, data_law(dcfg, raw["q_data"]), raw
