"""Reset/step environment around the powertrain simulator.

Observation: (SOC, target speed, target acceleration, achieved speed).
Action: engine share of the required power, in [0, 1].
Reward: -alpha1 * p_achieved - alpha2 * [speed missed] - alpha3 * [SOC deficit > beta].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cycles import DriveCycle
from .errors import UsageError, ValidationError
from .rl.per import Transition
from .sim import SimState, StepResult, Trace, demand_for, make_trace, step
from .vehicle import VehicleParams

SPEED_NORM = 40.0
ACCEL_NORM = 5.0


@dataclass(frozen=True)
class RewardParams:
    alpha1: float = 1.5
    alpha2: float = 10.0
    alpha3: float = 0.1
    beta: float = 0.15
    soc_ref: float = 0.65

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValidationError("reward coefficients must be non-negative")
        if not self.beta > 0:
            raise ValidationError("beta must be positive")
        if not 0 < self.soc_ref < 1:
            raise ValidationError("soc_ref must lie in (0, 1)")


@dataclass(frozen=True)
class EnvObs:
    soc: float
    s_cycle: float
    a_cycle: float
    s_achieved: float

    def vector(self) -> np.ndarray:
        return np.array([self.soc, self.s_cycle / SPEED_NORM, self.a_cycle / ACCEL_NORM,
                         self.s_achieved / SPEED_NORM])


def reward_terms(params: RewardParams, result: StepResult) -> tuple[float, float, float]:
    """(alpha1 term, alpha2 term, alpha3 term), each >= 0; reward is minus their sum."""
    miss = 1.0 if result.speed_miss else 0.0
    deficit = 1.0 if (params.soc_ref - result.soc) > params.beta else 0.0
    return params.alpha1 * result.p_achieved_kw, params.alpha2 * miss, params.alpha3 * deficit


def compute_reward(params: RewardParams, result: StepResult) -> float:
    e, m, s = reward_terms(params, result)
    return -e - m - s


class EmsEnv:
    def __init__(self, vehicle: VehicleParams, cycle: DriveCycle, reward: RewardParams | None = None):
        self.vehicle = vehicle
        self.cycle = cycle
        self.reward_params = reward or RewardParams()
        self.state: SimState | None = None
        self.results: list[StepResult] = []
        self.done = True

    @property
    def n_steps(self) -> int:
        return len(self.cycle) - 1

    def _obs(self) -> EnvObs:
        k = self.state.step_index + 1
        c = self.cycle
        return EnvObs(
            soc=self.state.soc,
            s_cycle=float(c.speed[k]),
            a_cycle=float((c.speed[k] - c.speed[k - 1]) / c.dt),
            s_achieved=self.state.v_achieved,
        )

    def reset(self) -> EnvObs:
        self.state = SimState.initial(self.vehicle)
        self.results = []
        self.done = False
        return self._obs()

    def step(self, action: float) -> tuple[EnvObs | None, float, bool, StepResult]:
        if self.done:
            raise UsageError("step() called on a finished episode; call reset()")
        k = self.state.step_index + 1
        demand = demand_for(self.vehicle, self.cycle, self.state, k)
        self.state, result = step(self.state, self.vehicle, demand.v_target, demand.grade,
                                  self.cycle.dt, action)
        self.results.append(result)
        reward = compute_reward(self.reward_params, result)
        self.done = self.state.step_index >= self.n_steps
        # past the last step there is no next target; reuse the final one for the terminal obs
        obs = None if self.done else self._obs()
        return obs, reward, self.done, result

    def terminal_obs(self) -> EnvObs:
        c = self.cycle
        return EnvObs(self.state.soc, float(c.speed[-1]), 0.0, self.state.v_achieved)

    def trace(self) -> Trace:
        return make_trace(self.vehicle, self.cycle, self.state, self.results)


def reset(env: EmsEnv) -> EnvObs:
    return env.reset()


def env_step(env: EmsEnv, action: float):
    return env.step(action)


Policy = Callable[[np.ndarray], float]


def episode(env: EmsEnv, policy: Policy) -> tuple[list[Transition], float, Trace]:
    """Roll one full cycle; ``policy`` maps a normalized observation vector to an action."""
    obs = env.reset()
    transitions: list[Transition] = []
    ret = 0.0
    done = False
    while not done:
        s = obs.vector()
        a = float(policy(s))
        obs, r, done, _ = env.step(a)
        s2 = (env.terminal_obs() if done else obs).vector()
        transitions.append(Transition(s, a, r, s2, done))
        ret += r
    return transitions, ret, env.trace()
