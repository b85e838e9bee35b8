"""Experiment configuration files.

An experiment is one TOML file::

    vehicle = "midsize_hev"          # bundled name or path to a vehicle TOML
    train_cycle = "synth200"         # bundled name or path to a cycle CSV
    eval_cycles = ["synth200", "udds"]
    episodes = 10
    seed = 0
    output_dir = "runs/synth200"

    [reward]      # RewardParams fields
    [agent]       # AgentConfig fields
    [training]    # warmup_episodes, updates_per_step

Relative paths are resolved against the directory holding the config file.
For the bundled experiments ``output_dir`` is relative to the working directory.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .cycles import BUNDLED_CYCLES, DriveCycle, get_cycle
from .env import RewardParams
from .errors import LookupFailure, ParseError, SchemaError, ValidationError
from .rl.ddpg import AgentConfig
from .vehicle import BUNDLED_VEHICLES, VehicleParams, get_vehicle

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUNDLED_EXPERIMENTS = ("synth200", "wltp_prius", "wltp_i3")
_TOP_KEYS = {"vehicle", "train_cycle", "eval_cycles", "episodes", "seed", "output_dir",
             "reward", "agent", "training"}


@dataclass(frozen=True)
class TrainingSchedule:
    warmup_episodes: int = 1
    updates_per_step: int = 1

    def __post_init__(self):
        if self.warmup_episodes < 0 or self.updates_per_step < 1:
            raise ValidationError("warmup_episodes must be >= 0 and updates_per_step >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    vehicle_path: str
    train_cycle: str
    eval_cycles: tuple[str, ...]
    episodes: int = 10
    seed: int = 0
    output_dir: str = "runs"
    reward: RewardParams = field(default_factory=RewardParams)
    agent: AgentConfig = field(default_factory=AgentConfig)
    training: TrainingSchedule = field(default_factory=TrainingSchedule)

    def __post_init__(self):
        object.__setattr__(self, "eval_cycles", tuple(self.eval_cycles))
        if self.episodes < 1:
            raise ValidationError("episodes must be >= 1")

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else replace(self, seed=int(seed))

    def load_vehicle(self) -> VehicleParams:
        return get_vehicle(self.vehicle_path)

    def load_train_cycle(self) -> DriveCycle:
        return get_cycle(self.train_cycle)

    def to_dict(self) -> dict[str, Any]:
        return {
            "vehicle": self.vehicle_path,
            "train_cycle": self.train_cycle,
            "eval_cycles": list(self.eval_cycles),
            "episodes": self.episodes,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "reward": {f.name: getattr(self.reward, f.name) for f in fields(RewardParams)},
            "agent": self.agent.to_dict(),
            "training": {f.name: getattr(self.training, f.name) for f in fields(TrainingSchedule)},
        }


def _resolve(ref: str, base: Path, bundled: tuple[str, ...], what: str) -> str:
    if not isinstance(ref, str) or not ref:
        raise SchemaError(f"{what} must be a non-empty string")
    if ref in bundled:
        return ref
    path = Path(ref)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise LookupFailure(f"{what} {ref!r} is neither a bundled name nor an existing file")
    return str(path)


def _table(tree: Mapping[str, Any], name: str) -> dict[str, Any]:
    sec = tree.get(name, {})
    if not isinstance(sec, Mapping):
        raise SchemaError(f"[{name}] must be a table")
    return dict(sec)


def _build(cls, values: dict[str, Any], where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise SchemaError(f"unknown field(s) in [{where}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"[{where}]: {exc}") from None


def config_from_dict(tree: Mapping[str, Any], base_dir=".", output_base=None) -> ExperimentConfig:
    base = Path(base_dir)
    out_base = base if output_base is None else Path(output_base)
    unknown = set(tree) - _TOP_KEYS
    if unknown:
        raise SchemaError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    for key in ("vehicle", "train_cycle"):
        if key not in tree:
            raise SchemaError(f"missing field {key}")
    train = _resolve(tree["train_cycle"], base, BUNDLED_CYCLES, "train_cycle")
    evals = tree.get("eval_cycles", [tree["train_cycle"]])
    if not isinstance(evals, list):
        raise SchemaError("eval_cycles must be a list")
    out = Path(tree.get("output_dir", "runs"))
    return ExperimentConfig(
        vehicle_path=_resolve(tree["vehicle"], base, BUNDLED_VEHICLES, "vehicle"),
        train_cycle=train,
        eval_cycles=tuple(_resolve(c, base, BUNDLED_CYCLES, "eval cycle") for c in evals),
        episodes=int(tree.get("episodes", 10)),
        seed=int(tree.get("seed", 0)),
        output_dir=str(out if out.is_absolute() else out_base / out),
        reward=_build(RewardParams, _table(tree, "reward"), "reward"),
        agent=_build(AgentConfig, _table(tree, "agent"), "agent"),
        training=_build(TrainingSchedule, _table(tree, "training"), "training"),
    )


def bundled_experiment_path(name: str) -> Path:
    if name not in BUNDLED_EXPERIMENTS:
        raise LookupFailure(f"unknown bundled experiment {name!r}; choose from {', '.join(BUNDLED_EXPERIMENTS)}")
    return Path(str(resources.files("emslab") / "data" / "experiments" / f"{name}.toml"))


def load_config(ref) -> ExperimentConfig:
    """Read an experiment TOML (a path, or a bundled experiment name)."""
    ref = str(ref)
    path = bundled_experiment_path(ref) if ref in BUNDLED_EXPERIMENTS else Path(ref)
    if not path.exists():
        raise LookupFailure(f"experiment config not found: {path}")
    try:
        tree = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return config_from_dict(tree, path.parent, "." if ref in BUNDLED_EXPERIMENTS else None)
