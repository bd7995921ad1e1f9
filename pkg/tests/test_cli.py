import json
from pathlib import Path

import pandas as pd
import pytest

from cesmarkdown.cli import EXIT_ESTIMATION, EXIT_OK, EXIT_VALIDATION, main, parse_steps
from cesmarkdown.errors import ConfigurationError

GOLDEN = Path(__file__).parent / "data" / "golden_panel.csv"


def test_parse_steps():
    assert parse_steps("1..5") == [1, 2, 3, 4, 5]
    assert parse_steps("1-3") == [1, 2, 3]
    assert parse_steps("1,2") == [1, 2]
    with pytest.raises(ConfigurationError):
        parse_steps("one..two")


def test_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", str(GOLDEN)]) == EXIT_OK
    assert "6 rows, 2 plants" in capsys.readouterr().out
    bad = tmp_path / "bad.csv"
    pd.read_csv(GOLDEN).drop(columns="W_D").to_csv(bad, index=False)
    assert main(["validate", str(bad)]) == EXIT_VALIDATION
    assert "W_D" in capsys.readouterr().err
    assert main(["validate"]) == EXIT_VALIDATION
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"input": str(GOLDEN), "theta_instruments": ["not_there"]}))
    assert main(["validate", "--config", str(cfg)]) == EXIT_VALIDATION


def test_bad_configuration_exit_code(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"input": str(GOLDEN), "colour": "blue"}))
    assert main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    cfg.write_text("[")
    assert main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    cfg.write_text(json.dumps({"input": str(GOLDEN)}))
    assert main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--steps", "2..3"]) \
        == EXIT_VALIDATION
    assert main(["report", "--out", str(tmp_path / "nowhere")]) == EXIT_VALIDATION


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    gen = root / "gen.json"
    gen.write_text(json.dumps({"n_plants": 30, "n_years": 4, "n_markets": 3}))
    assert main(["simulate", "--config", str(gen), "--seed", "4", "--out", str(root), "--name", "tiny.csv"]) \
        == EXIT_OK
    return root


def test_simulate_writes_panel_and_truth(tiny):
    frame = pd.read_csv(tiny / "tiny.csv")
    assert len(frame) == 120
    truth = json.loads((tiny / "tiny.truth").read_text())
    assert truth["config"]["seed"] == 4 and "means" in truth


def test_estimate_and_estimation_failure(tiny, tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"input": str(tiny / "tiny.csv"), "baseline": str(tiny / "tiny.truth"),
                               "n_starts": 1, "supply_instruments_D": ["z_M", "z_M"]}))
    assert main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--steps", "1..1"]) == EXIT_OK
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["steps_completed"] == [1] and manifest["config"]["steps"] == [1]
    code = main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--steps", "1..4"])
    assert code == EXIT_ESTIMATION
    assert "step 4 failed" in capsys.readouterr().err
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["failed_step"] == "step 4"


def test_bootstrap_command_records_settings(tiny, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"input": str(tiny / "tiny.csv"), "baseline": str(tiny / "tiny.truth"),
                               "n_starts": 1}))
    out = tmp_path / "boot"
    assert main(["bootstrap", "--config", str(cfg), "--out", str(out), "--steps", "1..3", "--reps", "1",
                 "--seed", "12"]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"]["bootstrap"] == 12 and manifest["config"]["bootstrap_reps"] == 1
    table = pd.read_csv(out / "wild_bootstrap_replications.csv")
    assert len(table) == 1
