import json

import numpy as np
import pytest

from emslab import harness
from emslab.config import config_from_dict
from emslab.cycles import get_cycle, synthetic_cycle
from emslab.errors import ArgumentError, ParseError, TrainingDivergence
from emslab.rl import load_checkpoint
from emslab.sim import rule_based_strategy, run_cycle, trace_to_csv
from emslab.vehicle import get_vehicle

SMALL_AGENT = {"actor_hidden": [16], "critic_hidden": [16, 16], "batch_size": 16}


def small_config(tmp_path, episodes=2, **extra):
    tree = {"vehicle": "midsize_hev", "train_cycle": "synth200", "episodes": episodes, "seed": 4,
            "output_dir": "run", "agent": dict(SMALL_AGENT)}
    tree.update(extra)
    return config_from_dict(tree, tmp_path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("train")
    cfg = small_config(tmp)
    return cfg, harness.cmd_train(cfg)


def test_train_writes_log_and_checkpoint_per_episode(trained):
    cfg, res = trained
    lines = harness.read_train_log(res.log_path)
    assert [d["episode"] for d in lines] == [1, 2]
    assert set(lines[0]) == {"episode", "return", "total_energy_kwh", "speed_miss_steps", "final_soc",
                             "noise_sigma", "updates"}
    assert [p.name for p in res.checkpoints] == ["ckpt_ep001.json", "ckpt_ep002.json"]
    # warmup episode performs no updates, then one update per step
    n_steps = len(synthetic_cycle()) - 1
    assert lines[0]["updates"] == 0 and lines[1]["updates"] == n_steps
    agent, meta = load_checkpoint(res.checkpoints[-1])
    assert meta["episode"] == 2 and meta["vehicle"] == "midsize_hev"


def test_same_seed_gives_identical_training(tmp_path, trained):
    _, res = trained
    again = harness.cmd_train(small_config(tmp_path))
    assert again.log_path.read_bytes() == res.log_path.read_bytes()
    assert again.checkpoints[-1].read_bytes() == res.checkpoints[-1].read_bytes()


def test_updates_per_step_is_honoured(tmp_path):
    cfg = small_config(tmp_path, episodes=2, training={"updates_per_step": 2, "warmup_episodes": 1})
    res = harness.cmd_train(cfg)
    assert res.log[-1].updates == 2 * (len(synthetic_cycle()) - 1)


def test_divergence_aborts_and_keeps_last_checkpoint(tmp_path, monkeypatch):
    cfg = small_config(tmp_path, episodes=3)
    calls = {"n": 0}
    original = harness.DdpgAgent.update

    def flaky(self, batch, w=None, train_actor=True):
        calls["n"] += 1
        if calls["n"] > 250:
            raise TrainingDivergence("critic loss became non-finite (nan)")
        return original(self, batch, w, train_actor)

    monkeypatch.setattr(harness.DdpgAgent, "update", flaky)
    with pytest.raises(TrainingDivergence, match="ckpt_ep002"):
        harness.cmd_train(cfg)
    assert (tmp_path / "run" / "ckpt_ep002.json").exists()
    assert not (tmp_path / "run" / "ckpt_ep003.json").exists()
    assert len(harness.read_train_log(tmp_path / "run" / harness.LOG_NAME)) == 2


def test_evaluate_is_greedy_and_repeatable(trained, tmp_path):
    _, res = trained
    a = harness.cmd_evaluate(res.checkpoints[-1], "synth200", output_dir=tmp_path / "a")
    b = harness.cmd_evaluate(res.checkpoints[-1], "synth200", output_dir=tmp_path / "b")
    assert a.trace.steps == b.trace.steps
    for name in ("rl_synth200_trace.csv", "rl_synth200_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "rl_synth200_summary.json").read_text())
    assert summary["speed_miss_steps"] == a.trace.speed_miss_steps


def test_rule_based_through_harness_matches_simulator():
    veh = get_vehicle("prius_prime")
    cyc = get_cycle("udds")
    ev = harness.cmd_evaluate(None, "udds", vehicle="prius_prime", strategy=harness.RULE)
    direct = run_cycle(veh, cyc, rule_based_strategy(veh))
    assert trace_to_csv(ev.trace) == trace_to_csv(direct)


def test_evaluate_argument_errors(trained):
    with pytest.raises(ArgumentError):
        harness.cmd_evaluate(None, "udds", vehicle="prius_prime")
    with pytest.raises(ArgumentError):
        harness.cmd_evaluate(None, "udds", vehicle="prius_prime", strategy="oracle")


def test_transfer_table_shape_and_identity(trained, tmp_path):
    _, res = trained
    cycles = ["synth200", "us06", "hwfet"]
    table = harness.cmd_transfer(res.checkpoints[-1], cycles, output_dir=tmp_path)
    assert len(table.rows) == 2 * len(cycles)
    for c in cycles:
        for s in (harness.RL, harness.RULE):
            row = table.get(s, c)
            assert row.total_energy_kwh == row.fuel_kwh + row.battery_kwh
    csv_lines = (tmp_path / "transfer.csv").read_text().splitlines()
    assert csv_lines[0].split(",") == list(harness.RESULT_COLUMNS)
    assert len(csv_lines) == 1 + 2 * len(cycles)
    text = (tmp_path / "transfer.txt").read_text()
    assert all(c in text for c in cycles)


def test_transfer_rule_based_rows_are_bit_exact(trained):
    _, res = trained
    a = harness.cmd_transfer(res.checkpoints[-1], ["udds"])
    b = harness.cmd_transfer(res.checkpoints[-1], ["udds"])
    assert a.to_csv() == b.to_csv()


def test_transfer_defaults_to_experiment_eval_cycles(trained):
    cfg, res = trained
    table = harness.cmd_transfer(res.checkpoints[-1])
    assert table.cycles == list(cfg.eval_cycles) == ["synth200"]


def test_transfer_needs_cycles(trained):
    with pytest.raises(ArgumentError):
        harness.cmd_transfer(trained[1].checkpoints[-1], [])


def write_traces(tmp_path, trained):
    _, res = trained
    rl = harness.cmd_evaluate(res.checkpoints[0], "synth200", output_dir=tmp_path)
    rb = harness.cmd_evaluate(res.checkpoints[0], "synth200", output_dir=tmp_path, strategy=harness.RULE)
    return tmp_path / "rl_synth200_trace.csv", tmp_path / "rule_based_synth200_trace.csv", rl, rb


def test_compare_identical_traces_have_zero_difference(tmp_path, trained):
    rl_path, _, _, _ = write_traces(tmp_path, trained)
    text = harness.cmd_compare_plotdata([rl_path, rl_path], ["a", "b"])
    rows = [line.split(",") for line in text.splitlines()]
    head = rows[0]
    ia, ib = head.index("speed_diff_a"), head.index("speed_diff_b")
    assert all(r[ia] == r[ib] for r in rows[1:])


def test_compare_columns_and_consistency(tmp_path, trained):
    rl_path, rb_path, rl, rb = write_traces(tmp_path, trained)
    out = tmp_path / "cmp.csv"
    harness.cmd_compare_plotdata([rl_path, rb_path], ["rl", "rb"], out)
    rows = [line.split(",") for line in out.read_text().splitlines()]
    head = rows[0]
    assert head == ["t", "v_target", "energy_kwh_cum_rl", "speed_diff_rl", "energy_kwh_cum_rb", "speed_diff_rb"]
    last = rows[-1]
    assert abs(float(last[2]) - rl.trace.total_energy_kwh) <= 1e-9
    assert abs(float(last[4]) - rb.trace.total_energy_kwh) <= 1e-9
    energy_rl = np.array([float(r[2]) for r in rows[1:]])
    energy_rb = np.array([float(r[4]) for r in rows[1:]])
    assert not np.array_equal(energy_rl, energy_rb)


def test_compare_rejects_different_cycles(tmp_path, trained):
    rl_path, _, _, _ = write_traces(tmp_path, trained)
    other = tmp_path / "other"
    harness.cmd_evaluate(None, "udds", vehicle="midsize_hev", output_dir=other, strategy=harness.RULE)
    with pytest.raises(ArgumentError):
        harness.cmd_compare_plotdata([rl_path, other / "rule_based_udds_trace.csv"])
    with pytest.raises(ArgumentError):
        harness.cmd_compare_plotdata([rl_path], ["a", "b"])
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n")
    with pytest.raises(ParseError):
        harness.cmd_compare_plotdata([bad])
