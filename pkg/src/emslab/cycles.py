"""Drive cycles: loading, validation, resampling, statistics and synthesis.

A cycle is stored on a uniform time grid. Acceleration is never stored; it is
derived from consecutive speeds when needed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ArgumentError, LookupFailure, ParseError, ValidationError

MAX_ABS_GRADE = 0.3
IDLE_SPEED = 0.1
BRIDGE_S = 10.0
BUNDLED_CYCLES = ("wltp_c3", "udds", "hwfet", "nedc", "us06", "synth200")
CSV_HEADER = ("time_s", "speed_mps", "grade")


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DriveCycle:
    name: str
    dt: float
    speed: np.ndarray
    grade: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "speed", _frozen(self.speed))
        grade = np.zeros_like(self.speed) if self.grade is None else self.grade
        object.__setattr__(self, "grade", _frozen(grade))
        object.__setattr__(self, "dt", float(self.dt))
        if self.check:
            validate_cycle(self)

    def __len__(self):
        return len(self.speed)

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self.speed)) * self.dt

    @property
    def accel(self) -> np.ndarray:
        """Per-step target acceleration; element k is (speed[k] - speed[k-1]) / dt."""
        return np.diff(self.speed) / self.dt

    @property
    def duration_s(self) -> float:
        return len(self.speed) * self.dt


@dataclass(frozen=True, eq=False)
class RawCycle:
    """Cycle samples as read from disk, possibly on a non-uniform grid."""

    name: str
    time: np.ndarray
    speed: np.ndarray
    grade: np.ndarray


@dataclass(frozen=True)
class CycleStats:
    duration_s: float
    distance_m: float
    mean_speed: float
    max_speed: float
    max_accel: float
    idle_fraction: float


@dataclass(frozen=True)
class GeneratorSpec:
    sources: tuple[str, ...]
    mode: str = "noise"
    noise_sigma: float = 0.0
    crop_window: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ValidationError("generator needs at least one source cycle")
        if self.mode not in ("noise", "concat", "crop"):
            raise ValidationError(f"unknown generator mode {self.mode!r}")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if self.mode == "crop" and self.crop_window is None:
            raise ValidationError("crop mode needs crop_window")


def validate_cycle(cycle: DriveCycle) -> None:
    speed, grade = cycle.speed, cycle.grade
    if not cycle.dt > 0:
        raise ValidationError(f"{cycle.name}: dt must be positive, got {cycle.dt}")
    if speed.ndim != 1 or len(speed) < 2:
        raise ValidationError(f"{cycle.name}: need at least 2 samples")
    if grade.shape != speed.shape:
        raise ValidationError(f"{cycle.name}: speed and grade lengths differ")
    if not (np.all(np.isfinite(speed)) and np.all(np.isfinite(grade))):
        raise ValidationError(f"{cycle.name}: non-finite samples")
    if np.any(speed < 0):
        i = int(np.argmax(speed < 0))
        raise ValidationError(f"{cycle.name}: negative speed {speed[i]} at sample {i}")
    if speed[0] != 0:
        raise ValidationError(f"{cycle.name}: cycle must start at rest")
    if np.any(np.abs(grade) >= MAX_ABS_GRADE):
        raise ValidationError(f"{cycle.name}: |grade| must stay below {MAX_ABS_GRADE}")


def _read_rows(path: Path) -> tuple[list[float], list[float], list[float]]:
    t, v, g = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header[:2] != ["time_s", "speed_mps"] or header[2:] not in ([], ["grade"]):
            raise ParseError(f"{path}:1: expected header time_s,speed_mps[,grade], got {','.join(header)}")
        ncol = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != ncol:
                raise ParseError(f"{path}:{lineno}: expected {ncol} columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
            t.append(vals[0])
            v.append(vals[1])
            g.append(vals[2] if ncol == 3 else 0.0)
    return t, v, g


def load_cycle(path, raw: bool = False, name: str | None = None) -> DriveCycle | RawCycle:
    """Read a cycle CSV.

    With ``raw=True`` non-uniform timestamps are accepted and a :class:`RawCycle`
    is returned, to be passed through :func:`resample`.
    """
    path = Path(path)
    if not path.exists():
        raise LookupFailure(f"cycle file not found: {path}")
    t, v, g = _read_rows(path)
    name = name or path.stem
    if len(t) < 2:
        raise ValidationError(f"{path}: need at least 2 samples")
    t_arr = np.asarray(t)
    steps = np.diff(t_arr)
    if np.any(steps <= 0):
        i = int(np.argmax(steps <= 0)) + 1
        raise ValidationError(f"{path}: time not strictly increasing at sample {i}")
    if np.any(np.asarray(v) < 0):
        i = int(np.argmax(np.asarray(v) < 0))
        raise ValidationError(f"{path}: negative speed at sample {i}")
    if raw:
        return RawCycle(name, _frozen(t_arr), _frozen(v), _frozen(g))
    dt = steps[0]
    if np.any(np.abs(steps - dt) > 1e-6 * max(1.0, dt)):
        raise ValidationError(f"{path}: non-uniform time grid; load with raw=True and resample")
    if abs(t_arr[0]) > 1e-9:
        raise ValidationError(f"{path}: time must start at 0")
    return DriveCycle(name, float(dt), v, g)


def bundled_cycle_path(name: str) -> Path:
    if name not in BUNDLED_CYCLES:
        raise LookupFailure(f"unknown bundled cycle {name!r}; choose from {', '.join(BUNDLED_CYCLES)}")
    return Path(str(resources.files("emslab") / "data" / "cycles" / f"{name}.csv"))


def get_cycle(ref: str) -> DriveCycle:
    """Resolve a bundled cycle name or a CSV path."""
    if ref in BUNDLED_CYCLES:
        return load_cycle(bundled_cycle_path(ref))
    return load_cycle(ref)


def _fmt(x: float) -> str:
    return repr(float(x))


def cycle_to_csv(cycle: DriveCycle) -> str:
    lines = [",".join(CSV_HEADER)]
    for i, (v, g) in enumerate(zip(cycle.speed, cycle.grade)):
        lines.append(f"{_fmt(round(i * cycle.dt, 9))},{_fmt(v)},{_fmt(g)}")
    return "\n".join(lines) + "\n"


def save_cycle(cycle: DriveCycle, path) -> None:
    Path(path).write_text(cycle_to_csv(cycle), encoding="utf-8")


def resample(cycle: DriveCycle | RawCycle, dt_new: float) -> DriveCycle:
    """Linearly interpolate speed and grade onto a uniform grid of step ``dt_new``."""
    if not dt_new > 0:
        raise ArgumentError(f"dt_new must be positive, got {dt_new}")
    if isinstance(cycle, RawCycle):
        t_old = cycle.time - cycle.time[0]
    else:
        if dt_new == cycle.dt:
            return DriveCycle(cycle.name, cycle.dt, cycle.speed, cycle.grade, check=cycle.check)
        t_old = cycle.time
    t_end = t_old[-1]
    n = int(np.floor(t_end / dt_new + 1e-9)) + 1
    t_new = np.arange(n) * dt_new
    if t_end - t_new[-1] > 1e-9 * max(1.0, t_end):
        # keep the final sample so the endpoint survives
        t_new = np.append(t_new, t_end)
        n += 1
    speed = np.interp(t_new, t_old, cycle.speed)
    grade = np.interp(t_new, t_old, cycle.grade)
    return DriveCycle(cycle.name, dt_new, speed, grade, check=getattr(cycle, "check", True))


def cycle_stats(cycle: DriveCycle) -> CycleStats:
    speed = cycle.speed
    accel = cycle.accel
    return CycleStats(
        duration_s=cycle.duration_s,
        distance_m=float(np.sum(speed) * cycle.dt),
        mean_speed=float(np.mean(speed)),
        max_speed=float(np.max(speed)),
        max_accel=float(np.max(accel)) if len(accel) else 0.0,
        idle_fraction=float(np.mean(speed < IDLE_SPEED)),
    )


def generate_cycle(spec: GeneratorSpec, library: Mapping[str, DriveCycle]) -> DriveCycle:
    missing = [s for s in spec.sources if s not in library]
    if missing:
        raise LookupFailure(f"unknown source cycle(s): {', '.join(missing)}")
    sources = [library[s] for s in spec.sources]
    name = f"{spec.mode}({'+'.join(spec.sources)})"

    if spec.mode == "noise":
        src = sources[0]
        rng = np.random.default_rng(spec.seed)
        speed = src.speed + rng.normal(0.0, spec.noise_sigma, len(src))
        speed = np.maximum(speed, 0.0)
        speed[0] = 0.0
        return DriveCycle(name, src.dt, speed, src.grade)

    if spec.mode == "concat":
        dt = sources[0].dt
        if any(abs(c.dt - dt) > 1e-12 for c in sources):
            raise ValidationError("concat sources must share dt")
        bridge = np.zeros(int(round(BRIDGE_S / dt)))
        speeds, grades = [sources[0].speed], [sources[0].grade]
        for c in sources[1:]:
            speeds += [bridge, c.speed]
            grades += [bridge, c.grade]
        return DriveCycle(name, dt, np.concatenate(speeds), np.concatenate(grades))

    src = sources[0]
    start_s, end_s = spec.crop_window
    if not (0 <= start_s < end_s <= src.duration_s):
        raise ValidationError(f"crop window {spec.crop_window} outside [0, {src.duration_s}]")
    i0 = int(round(start_s / src.dt))
    i1 = int(round(end_s / src.dt))
    speed, grade = src.speed[i0:i1], src.grade[i0:i1]
    if speed[0] != 0:
        speed = np.concatenate([[0.0], speed])
        grade = np.concatenate([[grade[0]], grade])
    return DriveCycle(name, src.dt, speed, grade)


# Speeds after each second of a launch from rest by the bundled mid-size config.
# The first second asks for 4.6 kW at the wheels, just above what its motor can
# ramp to from standstill, so every launch needs a small engine top-up; later
# seconds ask for about 5, 8 and then 10 kW, which the motor covers alone.
LAUNCH_PROFILE = (2.358, 3.373, 4.584, 5.752, 6.704, 7.523, 8.25, 8.907, 9.51, 10.0)
# (cruise speed in m/s, extra seconds held at that speed) for each trip
SYNTH_TRIPS = ((7, 3), (9, 2), (6, 3), (8, 2), (10, 1), (7, 2), (9, 2), (6, 2), (8, 3), (10, 1), (7, 2), (9, 1))
SYNTH_DECEL = 1.5
SYNTH_IDLE_S = 2


def synthetic_cycle(n_steps: int = 200, name: str = "synth200") -> DriveCycle:
    """Stop-and-go profile of short trips on a 1 s grid, used for quick training runs.

    Each trip launches along :data:`LAUNCH_PROFILE` until its cruise speed,
    holds it, brakes at :data:`SYNTH_DECEL` m/s^2 and idles. The samples are
    truncated or zero-padded to ``n_steps + 1``.
    """
    speed = [0.0] * (SYNTH_IDLE_S + 1)
    for cruise, hold in SYNTH_TRIPS:
        for v in LAUNCH_PROFILE:
            speed.append(min(v, cruise))
            if v >= cruise:
                break
        speed += [float(cruise)] * hold
        while speed[-1] > 0:
            speed.append(round(max(speed[-1] - SYNTH_DECEL, 0.0), 6))
        speed += [0.0] * SYNTH_IDLE_S
    speed = (speed + [0.0] * (n_steps + 1))[: n_steps + 1]
    return DriveCycle(name, 1.0, speed, None)
