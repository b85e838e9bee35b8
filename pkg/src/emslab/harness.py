"""Training, evaluation, transfer tables and plot exports.

Every output is a pure function of its inputs and the seed: no timestamps,
stable key order, and floats written with ``repr`` so repeat runs match byte
for byte.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import ExperimentConfig
from .cycles import DriveCycle, get_cycle
from .env import EmsEnv, EnvObs, RewardParams
from .errors import ArgumentError, ParseError, TrainingDivergence
from .rl import DdpgAgent, PerBuffer, Transition, load_checkpoint, save_checkpoint
from .sim import (SimState, Demand, Strategy, Trace, demand_for, rule_based_strategy,
                  totals_to_json, trace_to_csv)
from .vehicle import VehicleParams, get_vehicle

RL = "rl"
RULE = "rule_based"
LOG_NAME = "train_log.jsonl"

Chooser = Callable[[EnvObs, SimState, Demand], float]


# -- rollouts -------------------------------------------------------------


def rollout(env: EmsEnv, choose: Chooser) -> tuple[Trace, float]:
    """Run one full cycle; ``choose`` sees the observation plus the simulator's view."""
    obs = env.reset()
    ret = 0.0
    done = False
    while not done:
        demand = demand_for(env.vehicle, env.cycle, env.state, env.state.step_index + 1)
        obs, r, done, _ = env.step(choose(obs, env.state, demand))
        ret += r
    return env.trace(), ret


def agent_chooser(agent: DdpgAgent) -> Chooser:
    """Greedy actor: no exploration noise, dropout off."""
    return lambda obs, state, demand: agent.act(obs.vector(), explore=False)


def strategy_chooser(strategy: Strategy) -> Chooser:
    return lambda obs, state, demand: strategy(state, demand)


@dataclass(frozen=True)
class Evaluation:
    strategy: str
    trace: Trace
    ret: float

    def summary(self) -> dict:
        return {**self.trace.totals(), "strategy": self.strategy, "return": self.ret}


def evaluate(vehicle: VehicleParams, cycle: DriveCycle, chooser: Chooser, label: str,
             reward: RewardParams | None = None) -> Evaluation:
    trace, ret = rollout(EmsEnv(vehicle, cycle, reward), chooser)
    return Evaluation(label, trace, ret)


def evaluate_rule_based(vehicle: VehicleParams, cycle: DriveCycle,
                        reward: RewardParams | None = None) -> Evaluation:
    soc_ref = (reward or RewardParams()).soc_ref
    return evaluate(vehicle, cycle, strategy_chooser(rule_based_strategy(vehicle, soc_ref)), RULE, reward)


def write_evaluation(ev: Evaluation, out_dir, stem: str) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_path, summary_path = out / f"{stem}_trace.csv", out / f"{stem}_summary.json"
    trace_path.write_text(trace_to_csv(ev.trace), encoding="utf-8")
    summary_path.write_text(totals_to_json(ev.trace, strategy=ev.strategy, **{"return": ev.ret}),
                            encoding="utf-8")
    return trace_path, summary_path


# -- training -------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeLog:
    episode: int
    ret: float
    total_energy_kwh: float
    speed_miss_steps: int
    final_soc: float
    noise_sigma: float
    updates: int

    def to_json(self) -> str:
        d = asdict(self)
        d["return"] = d.pop("ret")
        return json.dumps(d, sort_keys=True)


@dataclass
class TrainResult:
    agent: DdpgAgent
    log: list[EpisodeLog]
    checkpoints: list[Path]
    log_path: Path


def checkpoint_name(episode: int) -> str:
    return f"ckpt_ep{episode:03d}.json"


def _meta(config: ExperimentConfig, episode: int) -> dict:
    return {"episode": episode, "seed": config.seed, "vehicle": config.vehicle_path,
            "train_cycle": config.train_cycle, "eval_cycles": list(config.eval_cycles),
            "reward": asdict(config.reward)}


def cmd_train(config: ExperimentConfig, output_dir=None) -> TrainResult:
    """Train on ``config.train_cycle``; one JSON line and one checkpoint per episode.

    If an update diverges the run stops with :class:`TrainingDivergence`; the
    checkpoint of the last finished episode stays on disk.
    """
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    vehicle, cycle = config.load_vehicle(), config.load_train_cycle()
    cfg, sched = config.agent, config.training
    env = EmsEnv(vehicle, cycle, config.reward)
    agent = DdpgAgent(cfg, seed=config.seed)
    buf = PerBuffer(cfg.buffer_capacity, cfg.alpha_per, cfg.beta_per_start, cfg.epsilon_per)
    planned = max((config.episodes - sched.warmup_episodes) * env.n_steps * sched.updates_per_step, 1)

    log_path = out / LOG_NAME
    log_path.write_text("", encoding="utf-8")
    log: list[EpisodeLog] = []
    ckpts: list[Path] = []
    for ep in range(1, config.episodes + 1):
        learning = ep > sched.warmup_episodes
        obs = env.reset()
        ret, done = 0.0, False
        while not done:
            s = obs.vector()
            a = agent.act(s, explore=True)
            obs, r, done, _ = env.step(a)
            s2 = (env.terminal_obs() if done else obs).vector()
            buf.insert(Transition(s, a, r, s2, done))
            ret += r
            if learning:
                # importance-sampling exponent anneals linearly over the planned updates
                frac = min(agent.updates / planned, 1.0)
                buf.beta = cfg.beta_per_start + (cfg.beta_per_end - cfg.beta_per_start) * frac
                for _ in range(sched.updates_per_step):
                    idx, batch, w = buf.sample(min(cfg.batch_size, len(buf)), agent.rng)
                    try:
                        _, _, td = agent.update(batch, w)
                    except TrainingDivergence as exc:
                        raise TrainingDivergence(
                            f"episode {ep}: {exc}; last good checkpoint: "
                            f"{ckpts[-1] if ckpts else 'none'}") from None
                    buf.update(idx, td)
        trace = env.trace()
        agent.decay_noise()
        entry = EpisodeLog(ep, ret, trace.total_energy_kwh, trace.speed_miss_steps, trace.final_soc,
                           agent.noise_sigma, agent.updates)
        log.append(entry)
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(entry.to_json() + "\n")
        path = out / checkpoint_name(ep)
        save_checkpoint(agent, path, _meta(config, ep))
        ckpts.append(path)
    return TrainResult(agent, log, ckpts, log_path)


def read_train_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


# -- evaluation -----------------------------------------------------------


def _checkpoint_context(meta: dict, vehicle: str | None) -> tuple[VehicleParams, RewardParams]:
    ref = vehicle or meta.get("vehicle")
    if not ref:
        raise ArgumentError("checkpoint does not record a vehicle; pass one explicitly")
    reward = RewardParams(**meta["reward"]) if "reward" in meta else RewardParams()
    return get_vehicle(ref), reward


def cmd_evaluate(checkpoint, cycle: str, vehicle: str | None = None, output_dir=None,
                 strategy: str = RL) -> Evaluation:
    """Greedy rollout of a checkpoint (or the rule-based baseline) on one cycle."""
    if strategy not in (RL, RULE):
        raise ArgumentError(f"strategy must be {RL!r} or {RULE!r}")
    agent, meta = load_checkpoint(checkpoint) if checkpoint else (None, {})
    if strategy == RL and agent is None:
        raise ArgumentError("evaluating the RL strategy needs a checkpoint")
    veh, reward = _checkpoint_context(meta, vehicle)
    cyc = get_cycle(cycle)
    if strategy == RL:
        ev = evaluate(veh, cyc, agent_chooser(agent), RL, reward)
    else:
        ev = evaluate_rule_based(veh, cyc, reward)
    if output_dir is not None:
        write_evaluation(ev, output_dir, f"{strategy}_{cyc.name}")
    return ev


# -- transfer table -------------------------------------------------------

RESULT_COLUMNS = ("strategy", "cycle", "total_energy_kwh", "fuel_kwh", "battery_kwh",
                  "speed_miss_steps", "final_soc", "return")


@dataclass(frozen=True)
class ResultRow:
    strategy: str
    cycle: str
    total_energy_kwh: float
    fuel_kwh: float
    battery_kwh: float
    speed_miss_steps: int
    final_soc: float
    ret: float

    @classmethod
    def from_evaluation(cls, ev: Evaluation) -> "ResultRow":
        t = ev.trace
        return cls(ev.strategy, t.cycle_name, t.total_energy_kwh, t.cum_fuel_kwh, t.cum_batt_kwh,
                   t.speed_miss_steps, t.final_soc, ev.ret)


@dataclass(frozen=True)
class ResultTable:
    rows: tuple[ResultRow, ...]

    def get(self, strategy: str, cycle: str) -> ResultRow:
        for row in self.rows:
            if row.strategy == strategy and row.cycle == cycle:
                return row
        raise KeyError((strategy, cycle))

    @property
    def cycles(self) -> list[str]:
        return list(dict.fromkeys(r.cycle for r in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in self.rows:
            writer.writerow([r.strategy, r.cycle, repr(r.total_energy_kwh), repr(r.fuel_kwh),
                             repr(r.battery_kwh), r.speed_miss_steps, repr(r.final_soc), repr(r.ret)])
        return buf.getvalue()

    def to_text(self) -> str:
        """One line per cycle: energy of each strategy, then missed steps."""
        head = f"{'cycle':<12}{'rule kWh':>10}{'RL kWh':>10}{'rule miss':>11}{'RL miss':>9}"
        lines = [head, "-" * len(head)]
        for c in self.cycles:
            rb, rl = self.get(RULE, c), self.get(RL, c)
            lines.append(f"{c:<12}{rb.total_energy_kwh:>10.3f}{rl.total_energy_kwh:>10.3f}"
                         f"{rb.speed_miss_steps:>11d}{rl.speed_miss_steps:>9d}")
        return "\n".join(lines) + "\n"


def transfer_table(agent: DdpgAgent, vehicle: VehicleParams, cycles: Sequence[DriveCycle],
                   reward: RewardParams | None = None) -> ResultTable:
    rows = []
    for cyc in cycles:
        rows.append(ResultRow.from_evaluation(evaluate(vehicle, cyc, agent_chooser(agent), RL, reward)))
        rows.append(ResultRow.from_evaluation(evaluate_rule_based(vehicle, cyc, reward)))
    return ResultTable(tuple(rows))


def cmd_transfer(checkpoint, cycles: Sequence[str] | None = None, vehicle: str | None = None,
                 output_dir=None) -> ResultTable:
    """Evaluate the checkpoint and the rule-based baseline on every cycle.

    ``cycles=None`` uses the eval cycles of the experiment that produced the checkpoint.
    """
    agent, meta = load_checkpoint(checkpoint)
    if cycles is None:
        cycles = meta.get("eval_cycles")
        if cycles is None:
            raise ArgumentError("checkpoint lists no eval cycles; pass them explicitly")
    if not cycles:
        raise ArgumentError("no cycles given")
    veh, reward = _checkpoint_context(meta, vehicle)
    table = transfer_table(agent, veh, [get_cycle(c) for c in cycles], reward)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "transfer.csv").write_text(table.to_csv(), encoding="utf-8")
        (out / "transfer.txt").write_text(table.to_text(), encoding="utf-8")
    return table


# -- plot export ----------------------------------------------------------


@dataclass(frozen=True)
class TraceColumns:
    """The subset of a trace that plotting needs."""

    label: str
    t: np.ndarray
    v_target: np.ndarray
    v_achieved: np.ndarray
    energy_kwh_cum: np.ndarray

    @classmethod
    def from_trace(cls, label: str, trace: Trace) -> "TraceColumns":
        cols = [np.array([getattr(r, f) for r in trace.steps], dtype=float)
                for f in ("t", "v_target", "v_achieved", "energy_kwh_cum")]
        return cls(label, *cols)


def read_trace_csv(path, label: str | None = None) -> TraceColumns:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        cols = [np.array([float(r[k]) for r in rows]) for k in ("t", "v_target", "v_achieved", "energy_kwh_cum")]
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"{path}: not a trace CSV ({exc})") from None
    return TraceColumns(label or path.stem, *cols)


def compare_plotdata(traces: Sequence[TraceColumns]) -> str:
    """Aligned CSV: time, target speed, then per trace cumulative energy and speed difference.

    The speed difference is target minus achieved speed.
    """
    if not traces:
        raise ArgumentError("nothing to compare")
    ref = traces[0]
    labels = [t.label for t in traces]
    if len(set(labels)) != len(labels):
        raise ArgumentError(f"duplicate trace labels: {labels}")
    for tr in traces[1:]:
        same = (len(tr.t) == len(ref.t) and np.array_equal(tr.t, ref.t)
                and np.array_equal(tr.v_target, ref.v_target))
        if not same:
            raise ArgumentError(f"traces {ref.label!r} and {tr.label!r} do not share a cycle")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["t", "v_target"]
    for lab in labels:
        header += [f"energy_kwh_cum_{lab}", f"speed_diff_{lab}"]
    writer.writerow(header)
    for i in range(len(ref.t)):
        row = [repr(float(ref.t[i])), repr(float(ref.v_target[i]))]
        for tr in traces:
            row += [repr(float(tr.energy_kwh_cum[i])), repr(float(tr.v_target[i] - tr.v_achieved[i]))]
        writer.writerow(row)
    return buf.getvalue()


def cmd_compare_plotdata(trace_paths: Sequence, labels: Sequence[str] | None = None, out=None) -> str:
    if labels is not None and len(labels) != len(trace_paths):
        raise ArgumentError("give one label per trace")
    labels = labels or [Path(p).stem for p in trace_paths]
    text = compare_plotdata([read_trace_csv(p, lab) for p, lab in zip(trace_paths, labels)])
    if out is not None:
        Path(out).write_text(text, encoding="utf-8")
    return text
