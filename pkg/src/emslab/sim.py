"""Per-timestep powertrain simulation and the rule-based baseline strategy.

Sign conventions: battery power is measured at the pack terminals, positive on
discharge. ``pack_kw`` is the matching change in stored chemical energy
(terminal power / eta_discharge when discharging, terminal power * eta_charge
when charging). Every power is in kW and every energy in kWh.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterator, Sequence

from .cycles import DriveCycle
from .vehicle import EfficiencyCurve, VehicleParams, eff_lookup, ramp_limit

RHO_AIR = 1.2
GRAVITY = 9.81
SPEED_TOL = 0.01
ENGINE_OFF_KW = 0.5
BISECT_TOL = 1e-4
SOC_REF_DEFAULT = 0.65


@dataclass(frozen=True)
class SimState:
    soc: float
    step_index: int = 0
    v_achieved: float = 0.0
    prev_engine_kw: float = 0.0
    prev_motor_kw: float = 0.0
    cum_fuel_kwh: float = 0.0
    cum_batt_kwh: float = 0.0
    speed_miss_count: int = 0

    @classmethod
    def initial(cls, vehicle: VehicleParams) -> "SimState":
        return cls(soc=vehicle.battery.soc_initial)


@dataclass(frozen=True)
class StepResult:
    t: float
    v_target: float
    v_achieved: float
    p_required_kw: float
    p_achieved_kw: float
    p_ice_kw: float
    p_batt_kw: float
    p_motor_kw: float
    p_wheel_kw: float
    fuel_kw: float
    pack_kw: float
    loss_kw: float
    regen_kwh: float
    soc: float
    fuel_kwh_cum: float
    energy_kwh_cum: float
    speed_miss: bool


@dataclass(frozen=True)
class Demand:
    """What the cycle asks for on the step about to be simulated."""

    step: int
    v_target: float
    v_cycle_prev: float
    grade: float
    dt: float
    p_req_kw: float

    @property
    def a_cycle(self) -> float:
        return (self.v_target - self.v_cycle_prev) / self.dt


Strategy = Callable[[SimState, Demand], float]


@dataclass(frozen=True)
class Trace:
    cycle_name: str
    dt: float
    steps: tuple[StepResult, ...]
    soc_initial: float
    capacity_kwh: float
    final_soc: float
    cum_fuel_kwh: float
    cum_batt_kwh: float
    total_energy_kwh: float
    distance_m: float
    speed_miss_steps: int

    def __len__(self):
        return len(self.steps)

    def __iter__(self) -> Iterator[StepResult]:
        return iter(self.steps)

    def totals(self) -> dict:
        return {
            "cycle": self.cycle_name,
            "total_energy_kwh": self.total_energy_kwh,
            "fuel_kwh": self.cum_fuel_kwh,
            "battery_kwh": self.cum_batt_kwh,
            "final_soc": self.final_soc,
            "distance_m": self.distance_m,
            "speed_miss_steps": self.speed_miss_steps,
        }


def required_power(vehicle: VehicleParams, v_prev: float, v_target: float, grade: float, dt: float) -> float:
    """Road-load power (kW) to go from ``v_prev`` to ``v_target`` in ``dt``, plus aux load.

    Uses the mean speed over the step. Negative values are braking demand.
    """
    m = vehicle.mass_kg
    v_mean = 0.5 * (v_prev + v_target)
    accel = (v_target - v_prev) / dt
    force = (m * accel
             + 0.5 * RHO_AIR * vehicle.drag_coeff * vehicle.frontal_area_m2 * v_mean * v_mean
             + m * GRAVITY * vehicle.rolling_resist
             + m * GRAVITY * grade)
    return force * v_mean / 1000.0 + vehicle.aux_load_kw


def achievable_speed(vehicle: VehicleParams, state: SimState, v_target: float, grade: float,
                     dt: float, p_max_kw: float) -> float:
    """Largest speed in [0, v_target] whose required power fits within ``p_max_kw``."""
    v_prev = state.v_achieved
    if required_power(vehicle, v_prev, v_target, grade, dt) <= p_max_kw:
        return v_target
    if required_power(vehicle, v_prev, 0.0, grade, dt) > p_max_kw:
        return 0.0
    lo, hi = 0.0, v_target
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if required_power(vehicle, v_prev, mid, grade, dt) <= p_max_kw:
            lo = mid
        else:
            hi = mid
    return lo


def _motor_eff(vehicle: VehicleParams, out_kw: float) -> float:
    mot = vehicle.motor
    return eff_lookup(mot.eff_curve, min(out_kw / mot.max_power_kw, 1.0))


def _motor_input(vehicle: VehicleParams, out_kw: float) -> float:
    return out_kw / _motor_eff(vehicle, out_kw) if out_kw > 0 else 0.0


def motor_output_limit(vehicle: VehicleParams, out_cap_kw: float, elec_cap_kw: float) -> float:
    """Largest motor shaft output <= ``out_cap_kw`` whose electrical input fits ``elec_cap_kw``."""
    if out_cap_kw <= 0 or elec_cap_kw <= 0:
        return 0.0
    if _motor_input(vehicle, out_cap_kw) <= elec_cap_kw:
        return out_cap_kw
    lo, hi = 0.0, out_cap_kw
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _motor_input(vehicle, mid) <= elec_cap_kw:
            lo = mid
        else:
            hi = mid
    return lo


def _engine_fuel(vehicle: VehicleParams, p_ice: float) -> float:
    eng = vehicle.engine
    if p_ice <= 0:
        return 0.0
    eff = eff_lookup(eng.eff_curve, min(p_ice / eng.max_power_kw, 1.0))
    return p_ice / eff + eng.idle_fuel_kw


def battery_limits(vehicle: VehicleParams, soc: float, dt: float) -> tuple[float, float]:
    """Terminal discharge and charge limits (kW) from power ratings and the SOC window."""
    bat = vehicle.battery
    per_kw = 3600.0 / dt * bat.capacity_kwh
    dis = min(bat.max_discharge_kw, max(soc - bat.soc_min, 0.0) * per_kw * bat.eta_discharge)
    chg = min(bat.max_charge_kw, max(bat.soc_max - soc, 0.0) * per_kw / bat.eta_charge)
    return dis, chg


def step(state: SimState, vehicle: VehicleParams, v_target: float, grade: float, dt: float,
         split_u: float) -> tuple[SimState, StepResult]:
    """Advance one timestep with engine share ``split_u`` of the required power."""
    if not math.isfinite(split_u):
        raise ValueError(f"split_u must be finite, got {split_u}")
    u = min(max(split_u, 0.0), 1.0)
    eng, mot, bat = vehicle.engine, vehicle.motor, vehicle.battery
    series = vehicle.architecture == "series"
    gen_eff = bat.eta_charge
    p_req = required_power(vehicle, state.v_achieved, v_target, grade, dt)
    dis_cap, chg_cap = battery_limits(vehicle, state.soc, dt)

    p_ice = p_motor = p_batt = 0.0
    loss = 0.0
    regen_stored = 0.0
    if p_req > 0:
        eng_cap = ramp_limit(state.prev_engine_kw, eng.max_power_kw, eng.time_to_full_power_s, dt)
        mot_cap = ramp_limit(state.prev_motor_kw, mot.max_power_kw, mot.time_to_full_power_s, dt)
        p_ice = min(u * p_req, eng_cap)
        if p_ice < ENGINE_OFF_KW:
            p_ice = 0.0
        if series:
            bus = p_ice * gen_eff
            deliverable = motor_output_limit(vehicle, mot_cap, bus + dis_cap)
        else:
            deliverable = p_ice + motor_output_limit(vehicle, mot_cap, dis_cap)
        if deliverable >= p_req:
            v = v_target
            p_wheel = p_req
        else:
            v = achievable_speed(vehicle, state, v_target, grade, dt, deliverable)
            p_wheel = required_power(vehicle, state.v_achieved, v, grade, dt)
        if p_wheel <= 0:
            # underpowered and slowing anyway: sources idle, friction brakes absorb the rest
            p_ice = 0.0
            loss += -p_wheel
        elif series:
            p_motor = p_wheel
            e_in = _motor_input(vehicle, p_motor)
            p_batt = e_in - bus
            if p_batt < -chg_cap:
                # battery cannot absorb the generator surplus; throttle the engine back
                bus = e_in + chg_cap
                p_ice = bus / gen_eff
                p_batt = -chg_cap
            loss += (e_in - p_motor) + (p_ice - bus)
        else:
            p_ice = min(p_ice, p_wheel)
            p_motor = p_wheel - p_ice
            e_in = _motor_input(vehicle, p_motor)
            p_batt = e_in
            loss += e_in - p_motor
    else:
        v = v_target
        p_wheel = p_req
        regen = min(-p_req * vehicle.regen_efficiency, mot.max_power_kw, chg_cap)
        p_batt = -regen
        p_motor = -regen
        loss += -p_req - regen

    fuel = _engine_fuel(vehicle, p_ice)
    loss += fuel - p_ice
    if p_batt >= 0:
        pack = p_batt / bat.eta_discharge
    else:
        pack = p_batt * bat.eta_charge
        if p_req <= 0:
            regen_stored = -pack * dt / 3600.0
    loss += pack - p_batt

    soc = state.soc - pack * dt / (3600.0 * bat.capacity_kwh)
    soc = min(max(soc, bat.soc_min), bat.soc_max)
    miss = abs(v_target - v) > SPEED_TOL
    cum_fuel = state.cum_fuel_kwh + fuel * dt / 3600.0
    cum_batt = state.cum_batt_kwh + pack * dt / 3600.0
    new_state = SimState(
        soc=soc,
        step_index=state.step_index + 1,
        v_achieved=v,
        prev_engine_kw=p_ice,
        prev_motor_kw=max(p_motor, 0.0),
        cum_fuel_kwh=cum_fuel,
        cum_batt_kwh=cum_batt,
        speed_miss_count=state.speed_miss_count + int(miss),
    )
    result = StepResult(
        t=(state.step_index + 1) * dt,
        v_target=v_target,
        v_achieved=v,
        p_required_kw=p_req,
        p_achieved_kw=fuel + max(p_batt, 0.0),
        p_ice_kw=p_ice,
        p_batt_kw=p_batt,
        p_motor_kw=p_motor,
        p_wheel_kw=p_wheel,
        fuel_kw=fuel,
        pack_kw=pack,
        loss_kw=loss,
        regen_kwh=regen_stored,
        soc=soc,
        fuel_kwh_cum=cum_fuel,
        energy_kwh_cum=cum_fuel + cum_batt,
        speed_miss=miss,
    )
    return new_state, result


def rule_based_split(state: SimState, vehicle: VehicleParams, p_req_kw: float,
                     soc_ref: float = SOC_REF_DEFAULT, dt: float = 1.0) -> float:
    """Charge-blended baseline split.

    Above ``soc_ref`` the battery carries as much of the demand as it can and
    the engine only tops up the remainder. At or below ``soc_ref`` the engine
    is asked for the demand plus a recharge margin, which clamps to 1.
    """
    if p_req_kw <= 0:
        return 0.0
    eng, mot = vehicle.engine, vehicle.motor
    if state.soc > soc_ref:
        dis_cap, _ = battery_limits(vehicle, state.soc, dt)
        mot_cap = ramp_limit(state.prev_motor_kw, mot.max_power_kw, mot.time_to_full_power_s, dt)
        if vehicle.architecture == "series":
            e_need = _motor_input(vehicle, min(p_req_kw, mot_cap))
            if e_need <= dis_cap:
                return 0.0
            u = (e_need - dis_cap) / vehicle.battery.eta_charge / p_req_kw
        else:
            cover = motor_output_limit(vehicle, mot_cap, dis_cap)
            if p_req_kw <= cover:
                return 0.0
            u = (p_req_kw - cover) / p_req_kw
        return min(max(u, 0.0), 1.0)
    margin = min(vehicle.battery.max_charge_kw, 0.1 * eng.max_power_kw)
    return min(max((p_req_kw + margin) / p_req_kw, 0.0), 1.0)


def rule_based_strategy(vehicle: VehicleParams, soc_ref: float = SOC_REF_DEFAULT) -> Strategy:
    def strategy(state: SimState, demand: Demand) -> float:
        return rule_based_split(state, vehicle, demand.p_req_kw, soc_ref=soc_ref, dt=demand.dt)
    return strategy


def constant_strategy(u: float) -> Strategy:
    return lambda state, demand: u


def demand_for(vehicle: VehicleParams, cycle: DriveCycle, state: SimState, k: int) -> Demand:
    v_t = float(cycle.speed[k])
    grade = float(cycle.grade[k])
    p_req = required_power(vehicle, state.v_achieved, v_t, grade, cycle.dt)
    return Demand(k, v_t, float(cycle.speed[k - 1]), grade, cycle.dt, p_req)


def make_trace(vehicle: VehicleParams, cycle: DriveCycle, state: SimState,
               results: Sequence[StepResult]) -> Trace:
    bat = vehicle.battery
    return Trace(
        cycle_name=cycle.name,
        dt=cycle.dt,
        steps=tuple(results),
        soc_initial=bat.soc_initial,
        capacity_kwh=bat.capacity_kwh,
        final_soc=state.soc,
        cum_fuel_kwh=state.cum_fuel_kwh,
        cum_batt_kwh=state.cum_batt_kwh,
        total_energy_kwh=state.cum_fuel_kwh + state.cum_batt_kwh,
        distance_m=sum(r.v_achieved for r in results) * cycle.dt,
        speed_miss_steps=state.speed_miss_count,
    )


def run_cycle(vehicle: VehicleParams, cycle: DriveCycle, strategy: Strategy) -> Trace:
    state = SimState.initial(vehicle)
    results = []
    for k in range(1, len(cycle)):
        demand = demand_for(vehicle, cycle, state, k)
        u = strategy(state, demand)
        state, res = step(state, vehicle, demand.v_target, demand.grade, cycle.dt, u)
        results.append(res)
    return make_trace(vehicle, cycle, state, results)


TRACE_COLUMNS = ("t", "v_target", "v_achieved", "p_req", "p_ice", "p_batt", "soc", "fuel_kwh_cum",
                 "energy_kwh_cum")


def trace_to_csv(trace: Trace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in trace.steps:
        writer.writerow([repr(float(x)) for x in (r.t, r.v_target, r.v_achieved, r.p_required_kw,
                                                   r.p_ice_kw, r.p_batt_kw, r.soc, r.fuel_kwh_cum,
                                                   r.energy_kwh_cum)])
    return buf.getvalue()


def totals_to_json(trace: Trace, **extra) -> str:
    return json.dumps({**trace.totals(), **extra}, indent=2, sort_keys=True) + "\n"


def step_record(result: StepResult) -> dict:
    return asdict(result)
