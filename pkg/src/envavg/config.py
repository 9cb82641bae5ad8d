"""Experiment configuration: YAML files validated against a JSON schema.

Errors carry the line of the offending entry, e.g. ``cfg.yaml:7: model.kernel.r0: ...``.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import jsonschema
import yaml

EXPERIMENTS = ("flocking", "relaxation", "meanfield", "gap_survey", "hydro_threshold",
               "monokinetic_limit", "property_suite")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_seed = {"type": "integer", "minimum": 0}

KERNEL_SCHEMA = {
    "type": "object",
    "required": ["profile"],
    "properties": {
        "profile": {"enum": ["cs_power", "bump", "gaussian", "bochner", "tabulated"]},
        "amplitude": _pos,
        "mollifier": {"type": "boolean"},
        "dim": {"enum": [1, 2]},
        "beta": {"type": "number", "minimum": 0},
        "lam": _pos,
        "r0": _pos,
        "R0": _pos,
        "h": _pos,
        "r": {"type": "array", "items": _num, "minItems": 2},
        "values": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2},
        "psi": {"$ref": "#/$defs/kernel"},
    },
    "additionalProperties": False,
}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["global", "identity", "cucker_smale", "motsch_tadmor", "beta",
                          "overmollified", "segregation", "rough_partition", "topological"]},
        "name": {"type": "string"},
        "kernel": {"$ref": "#/$defs/kernel"},
        "beta": {"type": "number", "minimum": 0, "maximum": 1},
        "quad_nodes": _int_pos,
        "partition": {
            "type": "object",
            "properties": {"count": _int_pos, "radius_factor": _pos,
                           "centers": {"type": "array", "items": _num}, "radius": _pos},
            "additionalProperties": False,
        },
        "edges": {"type": "array", "items": _num, "minItems": 1},
        "alpha": _pos, "eps": _pos, "width": _pos, "eccentricity": _pos,
        "length": _pos,
    },
    "additionalProperties": False,
}

PROFILE_SCHEMA = {
    "type": "object",
    "properties": {
        "constant": _num,
        "cos": {"type": "array", "items": _num},
        "sin": {"type": "array", "items": _num},
        "indicator": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "envavg experiment",
    "type": "object",
    "required": ["experiment", "seed"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": _seed,
        "output": {"type": "string", "minLength": 1},
        "domain": {
            "type": "object",
            "properties": {"kind": {"enum": ["line", "torus"]}, "length": _pos},
            "additionalProperties": False,
        },
        "model": {"$ref": "#/$defs/model"},
        "models": {"type": "array", "items": {"$ref": "#/$defs/model"}, "minItems": 1},
        "initial": {
            "type": "object",
            "properties": {
                "sampler": {"enum": ["random_swarm", "diverging_pair", "halton", "uniform_normal",
                                     "bimodal", "maxwellian", "profiles", "random_density"]},
                "seed": _seed,
                "N": _int_pos,
                "spread": _pos, "speed": _pos, "D0": _pos, "A0": _pos,
                "shift": _num, "width": _pos, "ubar": _num,
                "rho": {"$ref": "#/$defs/profile"},
                "u": {"$ref": "#/$defs/profile"},
                "count": _int_pos, "cells": _int_pos, "modes": _int_pos,
                "floor": {"type": "number", "minimum": 0},
                "spikes": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "params": {
            "type": "object",
            "properties": {
                "T": _pos, "dt": _pos, "sigma": {"type": "number", "minimum": 0},
                "record_every": _int_pos, "fit_from": {"type": "number", "minimum": 0},
                "nx": _int_pos, "nv": _int_pos, "n": _int_pos, "cfl": _pos,
                "umax": {"type": "number", "minimum": 0},
                "Ns": {"type": "array", "items": _int_pos, "minItems": 2},
                "reference_N": _int_pos, "paths": _int_pos, "workers": _int_pos,
                "eps": {"type": "array", "items": _pos, "minItems": 1},
                "delta_power": _pos,
                "transport_strength": {"type": "boolean"},
                "probes": _int_pos,
            },
            "additionalProperties": False,
        },
        "expect": {
            "type": "object",
            "properties": {
                "rate_below": _num, "r2_above": _num, "monotone_after": _num,
                "decreasing": {"type": "boolean"}, "slope_range": {
                    "type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "blowup": {"type": "boolean"}, "no_violations": {"type": "boolean"},
                "flags_agree": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
    "$defs": {"kernel": KERNEL_SCHEMA, "model": MODEL_SCHEMA, "profile": PROFILE_SCHEMA},
}


class ConfigError(ValueError):
    pass


def _node_line(node, path) -> int | None:
    """1-based line of the YAML node at ``path`` (deepest existing ancestor)."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == str(key)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def _dotted(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def load_config(path) -> dict:
    """Parse and validate a config file; raises ConfigError with a line-anchored message."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else str(path)
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: config must be a mapping")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = min(errors, key=lambda e: -len(e.absolute_path))
        loc = list(e.absolute_path)
        raise ConfigError(f"{path}:{_node_line(root, loc)}: {_dotted(loc)}: {e.message}")
    data["_lines"] = {"model": _node_line(root, ["model"]), "models": _node_line(root, ["models"])}
    return data


def config_hash(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return hashlib.sha256(json.dumps(clean, sort_keys=True).encode()).hexdigest()
