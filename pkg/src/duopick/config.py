"""Layered run configuration: defaults, then YAML file, then env, then flags.

Settings live in named sections, one per component config dataclass, plus a
scene section holding the planning-scene path. Later layers override earlier
ones key by key; every key is validated against the section's dataclass, so
a typo anywhere in the stack raises ConfigError instead of being ignored.
The merged values hash to a short digest that run manifests and artifact
files embed, tying outputs to the exact configuration that produced them.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import platform
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy
import yaml

from . import __version__
from .errors import ConfigError
from .estimator import FitConfig
from .executive import default_noise
from .grasp import GraspConfig
from .planning.rrt import PlannerConfig
from .sim.world import NoiseModel
from .teleop.server import ControlLoopConfig

ENV_PREFIX = "DUOPICK_"

_SECTIONS = {
    "fit": FitConfig,
    "grasp": GraspConfig,
    "planner": PlannerConfig,
    "loop": ControlLoopConfig,
    "noise": NoiseModel,
}


def _section_defaults() -> dict:
    values = {name: {} for name in _SECTIONS}
    values["noise"] = _to_plain(dataclasses.asdict(default_noise()))
    for name, cls in _SECTIONS.items():
        if name == "noise":
            continue
        values[name] = _to_plain(dataclasses.asdict(cls()))
    values["scene"] = {"path": None}
    return values


def _to_plain(value):
    """JSON-friendly copy: tuples to lists, enums to values, arrays to lists."""
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_to_plain(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _coerce(value, template):
    """Shape a plain value like the default it replaces (tuples, enums)."""
    if isinstance(template, enum.Enum):
        try:
            return type(template)(value)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if isinstance(template, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a sequence, got {value!r}")
        return tuple(
            _coerce(v, template[i] if i < len(template) else v)
            for i, v in enumerate(value)
        )
    return value


def _apply_layer(values: dict, layer: dict, origin: str) -> None:
    if not isinstance(layer, dict):
        raise ConfigError(f"{origin}: top level must be a mapping of sections")
    for section, entries in layer.items():
        if section not in values:
            raise ConfigError(f"{origin}: unknown section {section!r}")
        if not isinstance(entries, dict):
            raise ConfigError(f"{origin}: section {section!r} must be a mapping")
        for key, value in entries.items():
            if key not in values[section]:
                raise ConfigError(f"{origin}: unknown key {section}.{key}")
            values[section][key] = _to_plain(value)


def _env_layer(env: dict) -> dict:
    layer = {}
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if not key:
            raise ConfigError(f"environment variable {name} needs SECTION_KEY form")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"environment variable {name}: {exc}") from exc
        layer.setdefault(section, {})[key] = value
    return layer


def _overrides_layer(overrides: dict) -> dict:
    layer = {}
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} needs section.key form")
        layer.setdefault(section, {})[key] = value
    return layer


def config_hash(values: dict) -> str:
    """Short stable digest of the merged configuration values."""
    blob = json.dumps(values, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class Config:
    """Validated, merged settings for one run."""

    fit: FitConfig
    grasp: GraspConfig
    planner: PlannerConfig
    loop: ControlLoopConfig
    noise: NoiseModel
    scene_path: Optional[str]
    values: dict
    hash: str


def load_config(path=None, env: dict = None, overrides: dict = None) -> Config:
    """Merge defaults, YAML file, DUOPICK_* environment, and flag overrides.

    Precedence rises left to right. The file maps sections to key/value
    pairs; environment variables use DUOPICK_<SECTION>_<KEY>; overrides use
    dotted section.key names. Unknown sections or keys raise ConfigError,
    as does any value the target dataclass rejects.
    """
    values = _section_defaults()
    if path is not None:
        try:
            with open(path) as f:
                layer = yaml.safe_load(f) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        _apply_layer(values, layer, str(path))
    if env is not None:
        _apply_layer(values, _env_layer(env), "environment")
    if overrides:
        _apply_layer(values, _overrides_layer(overrides), "flags")

    built = {}
    for name, cls in _SECTIONS.items():
        defaults = cls() if name != "noise" else default_noise()
        kwargs = {}
        for f in dataclasses.fields(cls):
            kwargs[f.name] = _coerce(values[name][f.name], getattr(defaults, f.name))
        try:
            built[name] = cls(**kwargs)
        except (ValueError, TypeError, ConfigError) as exc:
            raise ConfigError(f"section {name!r}: {exc}") from exc
    scene_path = values["scene"]["path"]
    if scene_path is not None and not isinstance(scene_path, str):
        raise ConfigError("scene.path must be a string path")
    return Config(
        fit=built["fit"],
        grasp=built["grasp"],
        planner=built["planner"],
        loop=built["loop"],
        noise=built["noise"],
        scene_path=scene_path,
        values=values,
        hash=config_hash(values),
    )


def run_manifest(cfg: Config, command: str, seed=None) -> dict:
    """Reproducibility record emitted once per CLI run."""
    return {
        "command": command,
        "seed": seed,
        "config_hash": cfg.hash,
        "versions": {
            "duopick": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
