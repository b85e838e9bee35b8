import json
import subprocess
import sys

import pytest

from emslab.cli import main

EXP = """
vehicle = "midsize_hev"
train_cycle = "synth200"
episodes = 1
seed = 2
output_dir = "run"

[agent]
actor_hidden = [8]
critic_hidden = [8, 8]
"""


@pytest.fixture
def exp(tmp_path):
    p = tmp_path / "exp.toml"
    p.write_text(EXP)
    return p


def test_cycle_stats(capsys):
    assert main(["cycle", "stats", "us06"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["duration_s"] == 601.0


def test_cycle_gen_modes(tmp_path):
    out = tmp_path / "n.csv"
    assert main(["cycle", "gen", "--mode", "noise", "--seed", "3", "--sources", "udds", "--out", str(out)]) == 0
    first = out.read_bytes()
    assert main(["cycle", "gen", "--mode", "noise", "--seed", "3", "--sources", "udds", "--out", str(out)]) == 0
    assert out.read_bytes() == first
    assert main(["cycle", "gen", "--mode", "concat", "--sources", "udds,us06", "--out", str(out)]) == 0
    assert main(["cycle", "gen", "--mode", "crop", "--window", "0,100", "--out", str(out)]) == 0


def test_train_eval_transfer_compare(tmp_path, exp, capsys):
    assert main(["train", "-c", str(exp), "--seed", "5"]) == 0
    ckpt = tmp_path / "run" / "ckpt_ep001.json"
    assert ckpt.exists()
    assert main(["eval", "--ckpt", str(ckpt), "--cycle", "synth200", "--out", str(tmp_path / "ev")]) == 0
    assert main(["eval", "--cycle", "synth200", "--vehicle", "midsize_hev", "--strategy", "rule_based",
                 "--out", str(tmp_path / "ev")]) == 0
    assert main(["transfer", "--ckpt", str(ckpt), "--cycles", "synth200,us06", "--out", str(tmp_path / "tf")]) == 0
    assert main(["compare", str(tmp_path / "ev" / "rl_synth200_trace.csv"),
                 str(tmp_path / "ev" / "rule_based_synth200_trace.csv")]) == 0
    out = capsys.readouterr().out
    assert "us06" in out and "speed_diff_rl_synth200_trace" in out


@pytest.mark.parametrize("argv, code, category", [
    (["cycle", "stats", "missing.csv"], 4, "lookup"),
    (["eval", "--cycle", "synth200"], 2, "argument"),
    (["train"], 2, "argument"),
    (["frobnicate"], 2, "argument"),
    (["cycle", "gen", "--mode", "crop", "--out", "x.csv"], 3, "validation"),
    (["eval", "--ckpt", "nope.json", "--cycle", "synth200"], 5, "checkpoint"),
])
def test_errors_exit_nonzero_with_category(argv, code, category, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code
    assert f"emslab: {category}:" in capsys.readouterr().err


def test_bad_config_reports_schema_error(tmp_path, capsys):
    p = tmp_path / "exp.toml"
    p.write_text('vehicle = "midsize_hev"\n')
    assert main(["train", "-c", str(p)]) == 3
    assert "emslab: schema:" in capsys.readouterr().err


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "emslab.cli", "cycle", "stats", "hwfet"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["duration_s"] == 766.0
