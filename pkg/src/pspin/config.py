"""Run configuration: schema, validation, defaults, and the semantic hash.

A run is driven by one JSON file; unknown keys are rejected.  `threads` and
`out` describe the execution environment, not the experiment, so they are
excluded from the semantic hash and from the resolved config written next to
the outputs (reruns with different thread counts must be byte-identical).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import jsonschema

from .model import MixingSpec
from .parisi import DiscreteMeasure, XGrid

_NUMBER = {"type": "number"}
_POSINT = {"type": "integer", "minimum": 1}

_MEASURE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["atoms", "cdf"],
    "properties": {
        "atoms": {"type": "array", "items": _NUMBER, "minItems": 1},
        "cdf": {"type": "array", "items": _NUMBER, "minItems": 2},
    },
}

_GRID_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "L": {"type": "number", "exclusiveMinimum": 0},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "gh_nodes": {"type": "integer", "minimum": 2},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["beta"],
            "properties": {
                "beta": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0},
                    "minItems": 1,
                },
                "h": _NUMBER,
            },
        },
        "grid": _GRID_SCHEMA,
        "measure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k_max": {"type": "integer", "minimum": 1, "maximum": 8},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "atoms": {"type": "array", "items": _NUMBER, "minItems": 1},
                "cdf": {"type": "array", "items": _NUMBER, "minItems": 2},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": _POSINT,
                "n_values": {"type": "array", "items": _POSINT, "minItems": 1},
                "M": {"type": "integer", "minimum": 2},
                "t": {"type": "number", "minimum": 0, "maximum": 1},
                "t_nodes": {
                    "anyOf": [
                        {"type": "integer", "minimum": 5},
                        {"type": "array", "items": _NUMBER, "minItems": 5},
                    ]
                },
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "center": {"anyOf": [_NUMBER, {"const": "auto"}]},
                "mode": {"enum": ["t", "ts0"]},
                "nu": {"anyOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": "auto"}]},
                "lambdas": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "lower_edge": {"anyOf": [_NUMBER, {"const": "auto"}]},
                "optimize": {"type": "boolean"},
                "measure": _MEASURE_SCHEMA,
                "grid2": _GRID_SCHEMA,
                "bootstrap": {"type": "integer", "minimum": 50},
                "u_nodes": {"type": "integer", "minimum": 4},
                "dense_layers": {"type": "integer", "minimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "threads": {"anyOf": [{"type": "integer", "minimum": 1}, {"const": "auto"}]},
        "out": {"type": "string"},
        "format": {"enum": ["csv", "json"]},
    },
}

_ENV_KEYS = ("threads", "out")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated run configuration with resolved defaults."""

    raw: dict
    spec: MixingSpec
    grid: XGrid
    gh_nodes: int
    k_max: int
    tol: float
    measure: DiscreteMeasure | None
    experiment: dict
    seed: int
    threads: int
    out: str
    format: str = "csv"

    @property
    def semantic(self) -> dict:
        """The experiment-defining part of the config (sans environment keys)."""
        sem = {k: v for k, v in self.raw.items() if k not in _ENV_KEYS}
        sem["seed"] = self.seed
        return sem

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def validate_raw(raw: dict) -> None:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"invalid config: {e.message} (at {'/'.join(map(str, e.absolute_path))})")


def load_config(path: str, seed_override=None, out_override=None, threads_override=None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}")
    return build_config(raw, seed_override, out_override, threads_override)


def build_config(raw: dict, seed_override=None, out_override=None, threads_override=None) -> RunConfig:
    validate_raw(raw)
    spec = MixingSpec.from_dict(raw["model"])
    grid_cfg = raw.get("grid", {})
    grid = XGrid(
        half_width=float(grid_cfg.get("L", 10.0)),
        spacing=float(grid_cfg.get("delta", 1.0 / 64)),
    )
    gh_nodes = int(grid_cfg.get("gh_nodes", 40))
    measure_cfg = raw.get("measure", {})
    measure = None
    if "atoms" in measure_cfg or "cdf" in measure_cfg:
        if not ("atoms" in measure_cfg and "cdf" in measure_cfg):
            raise ConfigError("measure needs both atoms and cdf")
        try:
            measure = DiscreteMeasure(
                atoms=tuple(measure_cfg["atoms"]), cdf=tuple(measure_cfg["cdf"])
            )
        except ValueError as e:
            raise ConfigError(f"invalid measure: {e}")
    threads = threads_override if threads_override is not None else raw.get("threads", 1)
    if threads == "auto":
        import os

        threads = os.cpu_count() or 1
    return RunConfig(
        raw=raw,
        spec=spec,
        grid=grid,
        gh_nodes=gh_nodes,
        k_max=int(measure_cfg.get("k_max", 8)),
        tol=float(measure_cfg.get("tol", 1e-6)),
        measure=measure,
        experiment=dict(raw.get("experiment", {})),
        seed=int(seed_override if seed_override is not None else raw.get("seed", 0)),
        threads=int(threads),
        out=str(out_override if out_override is not None else raw.get("out", "out")),
        format=raw.get("format", "csv"),
    )
