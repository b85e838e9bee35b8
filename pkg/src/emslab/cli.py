"""Command-line entry point: ``emslab <command> ...``.

Errors print ``emslab: <category>: <message>`` on stderr and exit with the
error's code; success exits 0.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import harness
from .config import load_config
from .cycles import GeneratorSpec, cycle_stats, generate_cycle, get_cycle, save_cycle
from .errors import ArgumentError, EmslabError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def _split(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _cycle_stats(args) -> int:
    stats = asdict(cycle_stats(get_cycle(args.file)))
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def _cycle_gen(args) -> int:
    sources = _split(args.sources)
    window = None
    if args.window is not None:
        parts = _split(args.window)
        if len(parts) != 2:
            raise ArgumentError("--window takes START,END in seconds")
        window = (float(parts[0]), float(parts[1]))
    spec = GeneratorSpec(tuple(sources), args.mode, args.sigma, window, args.seed)
    cycle = generate_cycle(spec, {s: get_cycle(s) for s in sources})
    save_cycle(cycle, args.out)
    print(f"wrote {args.out} ({len(cycle)} samples)")
    return 0


def _train(args) -> int:
    config = load_config(args.config).with_seed(args.seed)
    result = harness.cmd_train(config, args.out)
    for e in result.log:
        print(f"episode {e.episode:3d}  return {e.ret:12.3f}  energy {e.total_energy_kwh:.4f} kWh"
              f"  missed {e.speed_miss_steps}")
    print(f"log: {result.log_path}")
    print(f"checkpoint: {result.checkpoints[-1]}")
    return 0


def _eval(args) -> int:
    ev = harness.cmd_evaluate(args.ckpt, args.cycle, args.vehicle, args.out, args.strategy)
    print(json.dumps(ev.summary(), indent=2, sort_keys=True))
    return 0


def _transfer(args) -> int:
    cycles = None if args.cycles is None else _split(args.cycles)
    table = harness.cmd_transfer(args.ckpt, cycles, args.vehicle, args.out)
    print(table.to_text(), end="")
    return 0


def _compare(args) -> int:
    labels = _split(args.labels) if args.labels else None
    text = harness.cmd_compare_plotdata(args.traces, labels, args.out)
    if args.out is None:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="emslab", description="HEV energy management: simulate, train, evaluate.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    cyc = sub.add_parser("cycle", help="drive cycle utilities")
    csub = cyc.add_subparsers(dest="cycle_command", required=True, parser_class=_Parser)
    st = csub.add_parser("stats", help="summary statistics of a cycle")
    st.add_argument("file", help="cycle CSV or bundled cycle name")
    st.set_defaults(func=_cycle_stats)
    gen = csub.add_parser("gen", help="derive a new cycle from existing ones")
    gen.add_argument("--mode", choices=("noise", "concat", "crop"), required=True)
    gen.add_argument("--sources", default="wltp_c3", help="comma-separated cycle names or paths")
    gen.add_argument("--sigma", type=float, default=0.5, help="noise standard deviation in m/s")
    gen.add_argument("--window", help="crop window START,END in seconds")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cycle_gen)

    tr = sub.add_parser("train", help="train a DDPG agent from an experiment file")
    tr.add_argument("-c", "--config", required=True, help="experiment TOML or bundled experiment name")
    tr.add_argument("--seed", type=int, help="override the config seed")
    tr.add_argument("--out", help="override the config output_dir")
    tr.set_defaults(func=_train)

    ev = sub.add_parser("eval", help="greedy rollout of a checkpoint on one cycle")
    ev.add_argument("--ckpt", help="checkpoint file (not needed for the rule-based strategy)")
    ev.add_argument("--vehicle", help="vehicle TOML or bundled name; defaults to the training vehicle")
    ev.add_argument("--cycle", required=True)
    ev.add_argument("--strategy", choices=(harness.RL, harness.RULE), default=harness.RL)
    ev.add_argument("--out", help="directory for the trace CSV and summary JSON")
    ev.set_defaults(func=_eval)

    tf = sub.add_parser("transfer", help="RL and rule-based results across several cycles")
    tf.add_argument("--ckpt", required=True)
    tf.add_argument("--cycles", help="comma-separated cycle names or paths; defaults to the experiment's eval_cycles")
    tf.add_argument("--vehicle")
    tf.add_argument("--out", help="directory for transfer.csv and transfer.txt")
    tf.set_defaults(func=_transfer)

    cmp_ = sub.add_parser("compare", help="plot-ready CSV from trace CSVs of one cycle")
    cmp_.add_argument("traces", nargs="+")
    cmp_.add_argument("--labels", help="comma-separated column labels, one per trace")
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=_compare)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except EmslabError as exc:
        print(f"emslab: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"emslab: io: {exc}", file=sys.stderr)
        return 7


if __name__ == "__main__":
    sys.exit(main())
