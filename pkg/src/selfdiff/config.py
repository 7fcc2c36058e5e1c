"""Experiment configuration: INI parsing and validation against schema.json."""

from __future__ import annotations

import configparser
import importlib
import inspect
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .measures import PolarGrid
from .potentials import (
    ConfinementPotential,
    InteractionPotential,
    LinearRotation,
    NoInteraction,
    QuarticRadial,
    SymmetricDot,
)


class ConfigError(ValueError):
    """Validation failure; ``problems`` lists every offending location."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@lru_cache(maxsize=1)
def schema() -> dict:
    return json.loads(resources.files("selfdiff").joinpath("schema.json").read_text())


def _parse(spec: dict, raw: str, where: str):
    t = spec["type"]
    try:
        if t == "int":
            v = int(raw)
        elif t == "float":
            v = float(raw)
        elif t == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            v = low in ("true", "1", "yes")
        elif t == "floats":
            v = [float(p) for p in raw.replace(",", " ").split()]
        else:
            v = raw.strip()
    except ValueError:
        raise ConfigError([f"{where}: cannot parse {raw!r} as {t}"]) from None
    return v


def _check_range(spec: dict, v, where: str) -> list[str]:
    out = []
    if spec["type"] in ("int", "float"):
        if not np.isfinite(v):
            out.append(f"{where} must be finite")
        if "min" in spec and v < spec["min"]:
            out.append(f"{where} must be >= {spec['min']}, got {v}")
        if "exclusive_min" in spec and v <= spec["exclusive_min"]:
            out.append(f"{where} must be > {spec['exclusive_min']}, got {v}")
        if "max" in spec and v > spec["max"]:
            out.append(f"{where} must be <= {spec['max']}, got {v}")
    if "choices" in spec and v not in spec["choices"]:
        out.append(f"{where} must be one of {spec['choices']}, got {v!r}")
    return out


@dataclass
class ExperimentConfig:
    kind: str
    blocks: dict = field(default_factory=dict)
    present: set = field(default_factory=set)

    def __getitem__(self, section: str) -> dict:
        return self.blocks[section]

    @property
    def seed(self) -> int:
        return int(self.blocks["run"]["seed"])

    def echo(self) -> dict:
        """Every value, defaults included, for the manifest."""
        return {s: dict(sorted(v.items())) for s, v in sorted(self.blocks.items())}


def load_config(path: str | Path | None, kind: str, text: str | None = None) -> ExperimentConfig:
    """Read and validate; unknown sections or keys and out-of-range values
    are collected and raised together as :class:`ConfigError`."""
    sch = schema()
    if kind not in sch["run_kinds"]:
        raise ConfigError([f"unknown run kind {kind!r}"])
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if text is not None:
        cp.read_string(text)
    elif path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError([f"config file {p} not found"])
        cp.read(p)

    problems = []
    blocks = {}
    for sec, keys in sch["sections"].items():
        blocks[sec] = {k: spec["default"] for k, spec in keys.items()}
    for sec in cp.sections():
        if sec not in sch["sections"]:
            problems.append(f"unknown section [{sec}]")
            continue
        for key, raw in cp.items(sec):
            where = f"{sec}.{key}"
            spec = sch["sections"][sec].get(key)
            if spec is None:
                problems.append(f"unknown key {where}")
                continue
            try:
                v = _parse(spec, raw, where)
            except ConfigError as e:
                problems.extend(e.problems)
                continue
            problems.extend(_check_range(spec, v, where))
            blocks[sec][key] = v
    missing = [s for s in sch["run_kinds"][kind] if not cp.has_section(s)]
    if missing:
        problems.append("missing blocks: " + ", ".join(f"[{s}]" for s in missing))
    cfg = ExperimentConfig(kind, blocks, set(cp.sections()))
    if not problems:
        problems.extend(_cross_checks(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def _cross_checks(cfg: ExperimentConfig) -> list[str]:
    out = []
    if cfg["potential"]["kind"] == "custom" and not cfg["potential"]["custom"]:
        out.append("potential.custom is required when potential.kind = custom")
    if cfg["interaction"]["kind"] == "custom" and not cfg["interaction"]["custom"]:
        out.append("interaction.custom is required when interaction.kind = custom")
    if len(cfg["sde"]["x0"]) != 2:
        out.append("sde.x0 needs two coordinates")
    if len(cfg["flow"]["init_center"]) != 2:
        out.append("flow.init_center needs two coordinates")
    return out


def _import(ref: str, where: str):
    mod, _, attr = ref.partition(":")
    try:
        obj = getattr(importlib.import_module(mod), attr)
    except (ImportError, AttributeError) as e:
        raise ConfigError([f"{where}: cannot import {ref!r} ({e})"]) from None
    # a factory function is called, an instance is used as is
    return obj() if inspect.isfunction(obj) else obj


def build_potential(cfg: ExperimentConfig) -> ConfinementPotential:
    p = cfg["potential"]
    if p["kind"] == "custom":
        V = _import(p["custom"], "potential.custom")
        if not isinstance(V, ConfinementPotential):
            raise ConfigError(["potential.custom does not give a ConfinementPotential"])
        return V
    return QuarticRadial(p["a"], p["b"], p["c"])


def build_interaction(cfg: ExperimentConfig) -> InteractionPotential:
    w = cfg["interaction"]
    kind = w["kind"]
    if kind == "rotation":
        return LinearRotation(w["theta"])
    if kind == "symmetric_dot":
        return SymmetricDot()
    if kind == "none":
        return NoInteraction()
    W = _import(w["custom"], "interaction.custom")
    if not isinstance(W, InteractionPotential):
        raise ConfigError(["interaction.custom does not give an InteractionPotential"])
    return W


def build_grid(cfg: ExperimentConfig, V: ConfinementPotential) -> PolarGrid:
    from .rotation2d import default_grid

    g = cfg["grid"]
    if g["rho_max"] > 0:
        return PolarGrid.gauss_legendre(g["rho_max"], g["n_rho"], g["n_angle"])
    return default_grid(V, g["n_rho"], g["n_angle"], g["tol"])
