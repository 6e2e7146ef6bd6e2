"""TOML experiment configuration: strict schema, canonical hashing."""

from __future__ import annotations

import hashlib
import sys
from dataclasses import fields

from .algorithms import RunConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1

# keys of the [run] table that are not RunConfig fields
_RUN_EXTRA_KEYS = {"seeds", "output_dir"}
_COST_KEYS = {"full_inspect", "full_label", "hi_label", "lo_inspect", "lo_label"}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


def _field_index():
    return {f.name: f for f in fields(RunConfig)}


def parse_config(text: str) -> dict:
    """Parse and validate a TOML experiment config. Returns
    {"seeds": [...], "output_dir": str|None, "run": RunConfig-kwargs}."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version: missing or unsupported "
                          f"(expected {SCHEMA_VERSION})")
    known_top = {"schema_version", "run", "cost_model"}
    for key in doc:
        if key not in known_top:
            raise ConfigError(f"unknown key: {key}")
    run = dict(doc.get("run", {}))
    index = _field_index()
    kwargs = {}
    seeds = run.pop("seeds", [0])
    output_dir = run.pop("output_dir", None)
    if not isinstance(seeds, list) or not seeds or \
            not all(isinstance(s, int) for s in seeds):
        raise ConfigError("run.seeds: must be a nonempty list of integers")
    for key, value in run.items():
        if key == "seed":
            raise ConfigError("run.seed: use run.seeds instead")
        if key not in index:
            raise ConfigError(f"unknown key: run.{key}")
        kwargs[key] = value
    for key, value in doc.get("cost_model", {}).items():
        if key not in _COST_KEYS:
            raise ConfigError(f"unknown key: cost_model.{key}")
        if value != "per_step" and not isinstance(value, (int, float)):
            raise ConfigError(f"cost_model.{key}: number or 'per_step' required")
        kwargs[f"cost_{key}"] = value
    # construct once to surface type/validation errors early
    try:
        RunConfig(seed=seeds[0], **kwargs).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return {"seeds": seeds, "output_dir": output_dir, "run": kwargs}


def load_config(path: str) -> dict:
    with open(path, "r") as f:
        return parse_config(f.read())


def config_hash(text: str) -> str:
    """Hash of the canonicalized config content."""
    lines = [ln.strip() for ln in text.strip().splitlines()
             if ln.strip() and not ln.strip().startswith("#")]
    canon = "\n".join(lines)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
