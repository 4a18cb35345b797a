import json
import subprocess
import sys

import pytest

from smoothfp.cli import main
from smoothfp.fileio import load_game, save_game
from smoothfp.game import PotentialGame, coordination_game
from smoothfp.harness import generate_game


@pytest.fixture
def coord(tmp_path):
    p = tmp_path / "coord.json"
    save_game(coordination_game(), p)
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_generate(tmp_path, capsys):
    out = tmp_path / "g.json"
    code, _, _ = run(capsys, "generate", "--players", "3", "--seed", "4", "--out", str(out))
    assert code == 0
    assert load_game(out) == generate_game(3, 4)
    code, text, _ = run(capsys, "generate", "--players", "2", "--seed", "4", "--distribution", "uniform")
    assert code == 0 and json.loads(text)["num_players"] == 2


def test_audit(coord, tmp_path, capsys):
    code, text, _ = run(capsys, "audit", "--game", coord, "--json")
    assert code == 0 and json.loads(text)["game_regular"] is True
    code, text, _ = run(capsys, "audit", "--game", coord)
    assert code == 0 and "game regular: True" in text
    bad = tmp_path / "bad.json"
    save_game(PotentialGame(2, [1.0, 0.0, 1.0, 0.0]), bad)
    assert run(capsys, "audit", "--game", str(bad))[0] == 3


def test_nd(coord, capsys):
    code, text, _ = run(capsys, "nd", "--game", coord, "--lambda", "0.2", "--json")
    assert code == 0
    nds = json.loads(text)["nash_distributions"]
    assert len(nds) == 3
    assert sorted(d["classification"] for d in nds) == ["stable", "stable", "unstable"]


def test_simulate_and_flow(coord, tmp_path, capsys):
    csv_path = tmp_path / "t.csv"
    code, _, _ = run(capsys, "simulate", "--game", coord, "--steps", "500", "--thinning", "100",
                     "--seed", "3", "--out", str(csv_path))
    assert code == 0
    assert csv_path.read_text().splitlines()[0] == "t,x_1,x_2"
    code, text, _ = run(capsys, "flow", "--game", coord, "--lambda", "0.2", "--x0", "0.9,0.9", "--json")
    assert code == 0 and json.loads(text)["terminal"][0] > 0.9


def test_experiment_and_config(coord, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambdas": [0.1], "runs": 4, "steps": 500, "thinning": 50,
                               "game_path": coord}))
    out = tmp_path / "exp"
    code, text, _ = run(capsys, "experiment", "--config", str(cfg), "--out", str(out), "--json")
    assert code == 0
    data = json.loads(text)
    assert len(data["per_lambda"][0]["runs"]) == 4
    assert (out / "summary.json").exists() and (out / "runs_lambda0.csv").exists()


def test_sweep(coord, capsys):
    code, text, _ = run(capsys, "sweep", "--game", coord, "--lambda", "10", "0.01", "--json")
    assert code == 0
    rows = json.loads(text)["rows"]
    assert rows[0]["flagged"] and not rows[1]["flagged"]


@pytest.mark.parametrize(
    "argv",
    [
        ["nd"],
        ["nd", "--players", "2", "--lambda", "-1"],
        ["audit", "--game", "/nonexistent.json"],
        ["nd", "--game", "x.json", "--players", "2"],
        ["generate"],
        ["experiment", "--players", "2", "--runs", "0"],
        ["frobnicate"],
        ["nd", "--lambda", "abc"],
    ],
)
def test_validation_exit_code(argv, capsys):
    with pytest.raises(SystemExit) as info:
        sys.exit(main(argv))
    assert info.value.code == 2


def test_malformed_game_file(tmp_path, capsys):
    p = tmp_path / "g.json"
    p.write_text('{"num_players": 2, "potential": [1, 2, 3]}')
    code, _, err = run(capsys, "audit", "--game", str(p))
    assert code == 2 and "2^2 = 4" in err


def test_experiment_audit_failure(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    save_game(PotentialGame(2, [1.0, 0.0, 1.0, 0.0]), bad)
    code, _, _ = run(capsys, "experiment", "--game", str(bad), "--runs", "2", "--steps", "10")
    assert code == 3
    code, _, _ = run(capsys, "experiment", "--game", str(bad), "--runs", "2", "--steps", "10", "--skip-audit")
    assert code == 0


def test_module_entry_point(coord):
    proc = subprocess.run([sys.executable, "-m", "smoothfp", "audit", "--game", coord, "--json"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["num_pure"] == 2


def test_workers_env(coord, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SMOOTHFP_WORKERS", "2")
    base = ["experiment", "--game", coord, "--runs", "6", "--steps", "300", "--batch-size", "2", "--json"]
    code, a, _ = run(capsys, *base)
    monkeypatch.setenv("SMOOTHFP_WORKERS", "1")
    code2, b, _ = run(capsys, *base)
    assert code == code2 == 0 and a == b
