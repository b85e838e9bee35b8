"""Vehicle parameter sets and component efficiency curves."""
from __future__ import annotations

import sys
from bisect import bisect_right
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .errors import ArgumentError, LookupFailure, ParseError, SchemaError, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUNDLED_VEHICLES = ("prius_prime", "bmw_i3_rex", "midsize_hev")
ARCHITECTURES = ("series", "series-parallel")


@dataclass(frozen=True)
class EfficiencyCurve:
    load: tuple[float, ...]
    eff: tuple[float, ...]

    def __post_init__(self):
        load = tuple(float(x) for x in self.load)
        eff = tuple(float(x) for x in self.eff)
        object.__setattr__(self, "load", load)
        object.__setattr__(self, "eff", eff)
        if len(load) != len(eff) or len(load) < 2:
            raise ValidationError("efficiency curve needs >= 2 paired knots")
        if load[0] != 0.0 or load[-1] != 1.0:
            raise ValidationError("efficiency curve knots must span load fraction 0..1")
        if any(b <= a for a, b in zip(load, load[1:])):
            raise ValidationError("efficiency curve load fractions must be strictly increasing")
        if any(not 0.0 < e <= 1.0 for e in eff):
            raise ValidationError("efficiencies must lie in (0, 1]")

    @classmethod
    def from_knots(cls, knots) -> "EfficiencyCurve":
        load, eff = zip(*knots)
        return cls(load, eff)


def eff_lookup(curve: EfficiencyCurve, load_fraction: float) -> float:
    """Piecewise-linear efficiency at ``load_fraction`` (callers clamp to [0, 1])."""
    if not 0.0 <= load_fraction <= 1.0:
        raise ArgumentError(f"load fraction {load_fraction} outside [0, 1]")
    load, eff = curve.load, curve.eff
    i = min(bisect_right(load, load_fraction) - 1, len(load) - 2)
    x0, x1 = load[i], load[i + 1]
    if load_fraction == x1:
        return eff[i + 1]
    return eff[i] + (eff[i + 1] - eff[i]) * (load_fraction - x0) / (x1 - x0)


def ramp_limit(prev_power_kw: float, max_power_kw: float, time_to_full_power_s: float, dt: float) -> float:
    if time_to_full_power_s <= 0:
        return max_power_kw
    return min(max_power_kw, prev_power_kw + max_power_kw * dt / time_to_full_power_s)


@dataclass(frozen=True)
class EngineParams:
    max_power_kw: float
    time_to_full_power_s: float
    eff_curve: EfficiencyCurve
    idle_fuel_kw: float = 0.0

    def __post_init__(self):
        if not self.max_power_kw > 0:
            raise ValidationError("engine.max_power_kw must be > 0")
        if self.time_to_full_power_s < 0:
            raise ValidationError("engine.time_to_full_power_s must be >= 0")
        if self.idle_fuel_kw < 0:
            raise ValidationError("engine.idle_fuel_kw must be >= 0")


@dataclass(frozen=True)
class MotorParams:
    max_power_kw: float
    time_to_full_power_s: float
    base_mass_kg: float
    specific_power_kg_per_kw: float
    eff_curve: EfficiencyCurve

    def __post_init__(self):
        if not self.max_power_kw > 0:
            raise ValidationError("motor.max_power_kw must be > 0")
        if self.time_to_full_power_s < 0:
            raise ValidationError("motor.time_to_full_power_s must be >= 0")
        if self.base_mass_kg < 0 or self.specific_power_kg_per_kw < 0:
            raise ValidationError("motor masses must be >= 0")

    @property
    def mass_kg(self) -> float:
        return self.base_mass_kg + self.specific_power_kg_per_kw * self.max_power_kw


@dataclass(frozen=True)
class BatteryParams:
    capacity_kwh: float
    max_discharge_kw: float
    max_charge_kw: float
    eta_discharge: float
    eta_charge: float
    soc_min: float
    soc_max: float
    soc_initial: float

    def __post_init__(self):
        if not self.capacity_kwh > 0:
            raise ValidationError("battery.capacity_kwh must be > 0")
        if self.max_discharge_kw < 0 or self.max_charge_kw < 0:
            raise ValidationError("battery power limits must be >= 0")
        for key in ("eta_discharge", "eta_charge"):
            if not 0 < getattr(self, key) <= 1:
                raise ValidationError(f"battery.{key} must lie in (0, 1]")
        for key in ("soc_min", "soc_max", "soc_initial"):
            if not 0 <= getattr(self, key) <= 1:
                raise ValidationError(f"battery.{key} must lie in [0, 1]")
        if not self.soc_min < self.soc_max:
            raise ValidationError("battery.soc_min must be < soc_max")
        if not self.soc_min <= self.soc_initial <= self.soc_max:
            raise ValidationError("battery.soc_initial must lie in [soc_min, soc_max]")


@dataclass(frozen=True)
class VehicleParams:
    name: str
    mass_kg: float
    drag_coeff: float
    frontal_area_m2: float
    rolling_resist: float
    regen_efficiency: float
    aux_load_kw: float
    engine: EngineParams
    motor: MotorParams
    battery: BatteryParams
    architecture: str = "series-parallel"
    # True once the motor mass estimate is part of mass_kg
    motor_mass_included: bool = False

    def __post_init__(self):
        if not self.mass_kg > 0:
            raise ValidationError("vehicle.mass_kg must be > 0")
        if not self.drag_coeff > 0:
            raise ValidationError("vehicle.drag_coeff must be > 0")
        if not self.frontal_area_m2 > 0:
            raise ValidationError("vehicle.frontal_area_m2 must be > 0")
        if self.rolling_resist < 0:
            raise ValidationError("vehicle.rolling_resist must be >= 0")
        if not 0 < self.regen_efficiency <= 1:
            raise ValidationError("vehicle.regen_efficiency must lie in (0, 1]")
        if self.aux_load_kw < 0:
            raise ValidationError("vehicle.aux_load_kw must be >= 0")
        if self.architecture not in ARCHITECTURES:
            raise ValidationError(f"vehicle.architecture must be one of {ARCHITECTURES}")

    def with_motor_mass(self) -> "VehicleParams":
        if self.motor_mass_included:
            return self
        return replace(self, mass_kg=self.mass_kg + self.motor.mass_kg, motor_mass_included=True)

    def to_dict(self) -> dict[str, Any]:
        """Nested plain-data form; inverse of :func:`vehicle_from_dict`."""
        d = asdict(self)
        for comp in ("engine", "motor"):
            curve = d[comp].pop("eff_curve")
            d[comp]["eff_load"] = list(curve["load"])
            d[comp]["eff_value"] = list(curve["eff"])
        top = {k: d.pop(k) for k in list(d) if k not in ("engine", "motor", "battery")}
        return {"vehicle": top, **d}


_REQUIRED = {
    "vehicle": ("name", "mass_kg", "drag_coeff", "frontal_area_m2", "rolling_resist",
                "regen_efficiency", "aux_load_kw", "architecture"),
    "engine": ("max_power_kw", "time_to_full_power_s", "eff_load", "eff_value"),
    "motor": ("max_power_kw", "time_to_full_power_s", "base_mass_kg", "specific_power_kg_per_kw",
              "eff_load", "eff_value"),
    "battery": tuple(f.name for f in fields(BatteryParams)),
}


def _section(tree: Mapping[str, Any], name: str) -> dict[str, Any]:
    sec = tree.get(name)
    if not isinstance(sec, Mapping):
        raise SchemaError(f"missing section [{name}]")
    for key in _REQUIRED[name]:
        if key not in sec:
            raise SchemaError(f"missing field {name}.{key}")
    return dict(sec)


def _curve(sec: dict[str, Any], where: str) -> EfficiencyCurve:
    try:
        return EfficiencyCurve(sec.pop("eff_load"), sec.pop("eff_value"))
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def vehicle_from_dict(tree: Mapping[str, Any]) -> VehicleParams:
    """Build and validate a vehicle from the nested config mapping.

    The motor mass estimate is added to ``mass_kg`` unless the mapping says it
    already has been (``motor_mass_included = true``).
    """
    top = _section(tree, "vehicle")
    eng = _section(tree, "engine")
    mot = _section(tree, "motor")
    bat = _section(tree, "battery")
    try:
        engine = EngineParams(eff_curve=_curve(eng, "engine"), **_pick(eng, EngineParams, "engine"))
        motor = MotorParams(eff_curve=_curve(mot, "motor"), **_pick(mot, MotorParams, "motor"))
        battery = BatteryParams(**_pick(bat, BatteryParams, "battery"))
        veh = VehicleParams(engine=engine, motor=motor, battery=battery,
                            **_pick(top, VehicleParams, "vehicle"))
    except TypeError as exc:
        raise SchemaError(str(exc)) from None
    return veh.with_motor_mass()


def _pick(sec: dict[str, Any], cls, where: str) -> dict[str, Any]:
    names = {f.name for f in fields(cls)} - {"eff_curve", "engine", "motor", "battery"}
    unknown = set(sec) - names
    if unknown:
        raise SchemaError(f"unknown field(s) in [{where}]: {', '.join(sorted(unknown))}")
    return {k: v for k, v in sec.items() if k in names}


def load_vehicle(path) -> VehicleParams:
    path = Path(path)
    if not path.exists():
        raise LookupFailure(f"vehicle config not found: {path}")
    try:
        tree = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return vehicle_from_dict(tree)


def bundled_vehicle_path(name: str) -> Path:
    if name not in BUNDLED_VEHICLES:
        raise LookupFailure(f"unknown bundled vehicle {name!r}; choose from {', '.join(BUNDLED_VEHICLES)}")
    return Path(str(resources.files("emslab") / "data" / "vehicles" / f"{name}.toml"))


def get_vehicle(ref: str) -> VehicleParams:
    """Resolve a bundled vehicle name or a config path."""
    if ref in BUNDLED_VEHICLES:
        return load_vehicle(bundled_vehicle_path(ref))
    return load_vehicle(ref)
