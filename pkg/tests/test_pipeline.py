import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from cesmarkdown.core import GeometricMeans
from cesmarkdown.dgp import write_simulation
from cesmarkdown.errors import ConfigurationError, ValidationError
from cesmarkdown.pipeline import (RunConfig, StepFailure, ingest, perpetual_inventory, perpetual_inventory_frame,
                                  policy_label, read_panel, regenerate_reports, run_pipeline)

GOLDEN = Path(__file__).parent / "data" / "golden_panel.csv"

PRODUCTION_FILES = {"production_parameters.csv", "gmm_diagnostics.csv", "productivity.csv", "manifest.json"}


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def test_golden_panel_ingests_sorted():
    obs = ingest(GOLDEN)
    assert [(o.plant_id, o.year) for o in obs] == [("A1", 2001), ("A1", 2002), ("A1", 2003),
                                                   ("B7", 2001), ("B7", 2002), ("B7", 2003)]
    first = obs[0]
    assert first.Q_obs == 4_800_000 and first.W_D == 2600 and first.Imp_lag == 1
    assert first.market_id == "R1"
    frame = read_panel(GOLDEN)
    assert frame["z_M"].tolist() == [-0.30, 0.05, 0.40, -0.10, 0.12, 0.22]


def test_column_map_renames_before_validation(tmp_path):
    src = pd.read_csv(GOLDEN).rename(columns={"W_D": "wage_permanent"})
    path = tmp_path / "renamed.csv"
    src.to_csv(path, index=False)
    with pytest.raises(ValidationError, match="W_D"):
        read_panel(path)
    assert len(read_panel(path, {"wage_permanent": "W_D"})) == 6


def write_rows(tmp_path, edit):
    frame = pd.read_csv(GOLDEN, dtype={"plant_id": str, "market_id": str})
    frame = edit(frame)
    path = tmp_path / "panel.csv"
    frame.to_csv(path, index=False)
    return path


@pytest.mark.parametrize("edit, message", [
    (lambda f: f.drop(columns="W_D"), "missing required column.*W_D"),
    (lambda f: f.assign(K=f["K"].where(f.index != 3, -5.0)), "non-positive value in column 'K' at line 5"),
    (lambda f: f.assign(P=f["P"].astype(object).where(f.index != 0, "n/a")), "column 'P' at line 2"),
    (lambda f: f.assign(Imp_lag=f["Imp_lag"].where(f.index != 2, 3)), "Imp_lag must be 0 or 1 at line 4"),
    (lambda f: f.assign(strike_intensity=f["strike_intensity"].where(f.index != 1, -0.1)),
     "negative strike_intensity at line 3"),
    (lambda f: pd.concat([f, f.iloc[[1]]], ignore_index=True), r"duplicate \(plant_id, year\) = \('A1', 2001\)"),
])
def test_invalid_panels_are_rejected_with_line_numbers(tmp_path, edit, message):
    with pytest.raises(ValidationError, match=message):
        read_panel(write_rows(tmp_path, edit))


def test_unreadable_inputs(tmp_path):
    bad = tmp_path / "latin1.csv"
    bad.write_bytes(GOLDEN.read_text().replace("A1", "Ä1").encode("latin-1"))
    with pytest.raises(ValidationError, match="UTF-8"):
        read_panel(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("\n")
    with pytest.raises(ValidationError, match="empty"):
        read_panel(empty)
    with pytest.raises(ValidationError, match="cannot read"):
        read_panel(tmp_path / "absent.csv")


# ---------------------------------------------------------------------------
# perpetual inventory
# ---------------------------------------------------------------------------


def test_perpetual_inventory_recursion():
    np.testing.assert_allclose(perpetual_inventory([100.0, 50.0, 50.0], [20.0, 20.0, 0.0]), [100.0, 110.0, 119.0])
    # a missing investment restarts the chain at the book value
    got = perpetual_inventory([100.0, 80.0, 70.0, 60.0], [10.0, np.nan, 5.0, 0.0], delta=0.2)
    np.testing.assert_allclose(got, [100.0, 90.0, 70.0, 61.0])
    np.testing.assert_allclose(perpetual_inventory([5.0, 1.0], [2.0, 0.0], delta=1.0), [5.0, 2.0])
    with pytest.raises(ConfigurationError):
        perpetual_inventory([1.0], [1.0], delta=1.5)
    with pytest.raises(ConfigurationError):
        perpetual_inventory([1.0, 2.0], [1.0])


def test_perpetual_inventory_by_plant_restarts_after_gap():
    f = pd.DataFrame({"plant_id": ["a", "a", "a", "a", "b", "b"], "year": [1, 2, 4, 5, 1, 2],
                      "K_book": [100.0, 0.0, 200.0, 0.0, 10.0, 0.0], "I": [10.0, 10.0, 20.0, 0.0, 1.0, 0.0]})
    k = perpetual_inventory_frame(f.iloc[::-1])
    np.testing.assert_allclose(k.sort_index().to_numpy(), [100.0, 100.0, 200.0, 200.0, 10.0, 10.0])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_run_config_round_trip_and_validation(tmp_path):
    cfg = RunConfig(input="p.csv", steps=[1, 2, 3], policy_intervals=[[2001, 2003], [2004, 2009]])
    assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg
    assert cfg.digest() == RunConfig.from_dict(cfg.to_dict()).digest()
    assert cfg.digest() != RunConfig(input="p.csv", steps=[1, 2]).digest()
    with pytest.raises(ConfigurationError, match="unknown configuration key"):
        RunConfig.from_dict({"stepz": [1]})
    for steps in ([2, 3], [1, 3], [], [1, 2, 3, 4, 5, 6]):
        with pytest.raises(ConfigurationError):
            RunConfig(steps=steps)
    with pytest.raises(ConfigurationError):
        RunConfig(policy_intervals=[[2005, 2008], [2007, 2010]])
    with pytest.raises(ConfigurationError):
        RunConfig(policy_intervals=[[2005, 2001]])
    with pytest.raises(ConfigurationError):
        RunConfig(bootstrap_reps=-1)


def test_run_config_load_resolves_paths_and_reads_baseline(tmp_path):
    (tmp_path / "sub").mkdir()
    means = GeometricMeans.from_levels(Q=2.0, K=3.0, M=4.0, H=5.0, C=6.0, D=7.0, W_H=8.0, W_C=9.0, W_D=10.0,
                                       P_M=1.0)
    (tmp_path / "sub" / "base.json").write_text(json.dumps({"means": asdict(means)}))
    path = tmp_path / "sub" / "run.json"
    path.write_text(json.dumps({"input": "../panel.csv", "baseline": "base.json"}))
    cfg = RunConfig.load(path)
    assert Path(cfg.input) == (tmp_path / "panel.csv").resolve()
    assert cfg.means(pd.DataFrame()) == means
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        RunConfig.load(path)
    with pytest.raises(ConfigurationError):
        RunConfig.load(tmp_path / "missing.json")


def test_configured_columns_must_exist():
    frame = read_panel(GOLDEN)
    RunConfig(theta_instruments=["z_M"]).check_columns(frame)
    with pytest.raises(ValidationError, match="z_X"):
        RunConfig(supply_instruments_C=["z_X"]).check_columns(frame)


def test_policy_labels():
    assert policy_label([2000, 2002, 2005, 2010], [[2001, 2003], [2005, 2008]]) == ["", "2001-2003", "2005-2008", ""]


# ---------------------------------------------------------------------------
# end-to-end runs on the small simulated panel
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def panel_config(small_sim, tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    csv, truth = write_simulation(small_sim, root / "panel.csv")
    return RunConfig(input=str(csv), baseline=str(truth), n_starts=2, policy_intervals=[[2001, 2004]])


@pytest.fixture(scope="module")
def full_run(panel_config, tmp_path_factory):
    return run_pipeline(panel_config, tmp_path_factory.mktemp("full"))


def test_full_run_writes_every_table(full_run, panel_config):
    files = {p.name for p in full_run.iterdir()}
    expected = PRODUCTION_FILES | {"labor_supply.csv", "theta.csv", "market_power.csv", "market_power_summary.csv",
                                   "yearly_weighted.csv", "wage_counterfactuals.csv", "sample_counts.csv",
                                   "plot_markup.csv", "plot_tfp.csv", "plot_markdown_C.csv",
                                   "plot_markdown_D_NB.csv", "plot_markdown_D_NN.csv"}
    assert files == expected
    manifest = json.loads((full_run / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["steps_completed"] == [1, 2, 3, 4, 5]
    assert manifest["config_hash"] == panel_config.digest()
    assert set(manifest["outputs"]) == expected - {"manifest.json"}
    params = pd.read_csv(full_run / "production_parameters.csv")
    sig_o = params.loc[params["parameter"] == "sigma_O", "estimate"].item()
    assert abs(sig_o - 0.501) < 0.05
    theta = pd.read_csv(full_run / "theta.csv").set_index("parameter").loc["theta", "estimate"]
    assert 0.85 < theta < 1.0
    plot = pd.read_csv(full_run / "plot_markup.csv")
    assert set(plot["policy_interval"].fillna("")) == {"", "2001-2004"}


def test_report_regeneration_is_byte_identical(full_run, tmp_path):
    before = {p.name: p.read_bytes() for p in full_run.glob("*.csv")}
    files = regenerate_reports(full_run)
    assert "market_power_summary.csv" in files and "plot_markdown_C.csv" in files
    for name, data in before.items():
        assert (full_run / name).read_bytes() == data, name
    with pytest.raises(ConfigurationError):
        regenerate_reports(tmp_path)


def test_production_only_run(panel_config, tmp_path):
    cfg = RunConfig.from_dict({**panel_config.to_dict(), "steps": [1, 2, 3]})
    out = run_pipeline(cfg, tmp_path)
    assert {p.name for p in out.iterdir()} == PRODUCTION_FILES
    prod = pd.read_csv(out / "productivity.csv")
    assert {"omega_L", "omega_H", "xi_H", "eps"} <= set(prod.columns)


def test_failing_step_leaves_a_failed_manifest(panel_config, tmp_path):
    cfg = RunConfig.from_dict({**panel_config.to_dict(), "steps": [1, 2, 3, 4],
                               "supply_instruments_C": ["z_M", "z_M"]})
    with pytest.raises(StepFailure) as err:
        run_pipeline(cfg, tmp_path)
    assert err.value.step == "step 4" and isinstance(err.value.cause, ConfigurationError)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["failed_step"] == "step 4"
    assert manifest["steps_completed"] == [1, 2, 3]
    assert (tmp_path / "productivity.csv").exists()


def test_ingest_failure_is_reported_as_validation(tmp_path):
    cfg = RunConfig(input=str(tmp_path / "missing.csv"))
    with pytest.raises(ValidationError):
        run_pipeline(cfg, tmp_path / "out")
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["failed_step"] == "ingest"
