import dataclasses

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cesmarkdown.core import omega_L_characterization, worker_shares_from_means
from cesmarkdown.dgp import (DgpConfig, LaborMarketConfig, foc_residuals, nested_logit_shares, read_truth,
                             simulate_labor_market, simulate_panel, write_simulation)
from cesmarkdown.errors import ConfigurationError, ParameterError
from cesmarkdown.panel import REQUIRED_COLUMNS, validate_panel

TINY = dict(n_plants=30, n_years=4, n_markets=3)


def test_every_first_order_condition_holds(small_sim):
    res = foc_residuals(small_sim.frame, small_sim.truth)
    assert res.abs().to_numpy().max() < 1e-10


def test_panel_passes_validation_and_has_expected_shape(small_sim):
    f = small_sim.frame
    validate_panel(f)
    assert set(REQUIRED_COLUMNS) <= set(f.columns)
    assert len(f) == 80 * 8
    assert f.groupby("plant_id")["market_id"].nunique().max() == 1
    assert (f[["plant_id", "year"]].sort_values(["plant_id", "year"]).index == f.index).all()


def test_truth_productivity_matches_characterization(small_sim):
    tr = small_sim.truth
    got = omega_L_characterization(small_sim.frame, tr.params.sigmas, worker_shares_from_means(tr.means), tr.means)
    np.testing.assert_allclose(got, tr.states["omega_L"], atol=1e-10)


def test_shares_equal_baseline_expenditure_shares(small_sim):
    tr = small_sim.truth
    assert tr.params.worker_shares == pytest.approx(worker_shares_from_means(tr.means))
    assert tr.params.alpha_C == pytest.approx(0.307)
    assert tr.params.alpha_M == pytest.approx(0.680)


def test_same_seed_same_panel_and_different_seed_differs():
    a = simulate_panel(DgpConfig(seed=5, **TINY))
    b = simulate_panel(DgpConfig(seed=5, **TINY))
    c = simulate_panel(DgpConfig(seed=6, **TINY))
    pd.testing.assert_frame_equal(a.frame, b.frame, check_exact=True)
    assert not np.allclose(a.frame["Q_obs"], c.frame["Q_obs"])


def test_noiseless_configuration_has_no_shocks():
    cfg = DgpConfig(seed=1, measurement_error=False, **TINY)
    cfg = dataclasses.replace(cfg, productivity=dataclasses.replace(cfg.productivity, sigma_H=0.0, sigma_L=0.0))
    st_ = simulate_panel(cfg).truth.states
    assert (st_["eps"] == 0).all()
    assert (st_["xi_H"].fillna(0) == 0).all() and (st_["xi_L"].fillna(0) == 0).all()


def test_config_round_trip_and_validation():
    cfg = DgpConfig(seed=3, g_C=2.0, **TINY)
    assert DgpConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        DgpConfig.from_dict({"unknown": 1})
    with pytest.raises(ConfigurationError):
        DgpConfig(conduct="cournot")
    with pytest.raises(ParameterError):
        DgpConfig(theta=1.5)
    with pytest.raises(ParameterError):
        DgpConfig(alpha_M=0.8, tau=0.5)
    with pytest.raises(ConfigurationError):
        DgpConfig(n_plants=5, n_markets=10)
    assert DgpConfig(demand_elasticity=6.0).effective_markup == pytest.approx(1.2)


def test_simulation_written_with_truth_sidecar(tmp_path):
    sim = simulate_panel(DgpConfig(seed=2, **TINY))
    csv, truth = write_simulation(sim, tmp_path / "out" / "panel.csv")
    assert truth.suffix == ".truth"
    back = pd.read_csv(csv, float_precision="round_trip")
    np.testing.assert_array_equal(back["Q_obs"].to_numpy(), sim.frame["Q_obs"].to_numpy())
    tr = read_truth(csv)
    assert tr.means == sim.truth.means
    assert tr.config == sim.truth.config
    np.testing.assert_array_equal(tr.states["omega_H"], sim.truth.states["omega_H"])


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=5), st.floats(0.05, 0.95))
def test_nested_logit_shares_add_up(log_e, eta):
    log_e = np.array(log_e)
    rivals = np.array([np.logaddexp.reduce(np.delete(log_e, j)) if len(log_e) > 1 else -np.inf
                       for j in range(len(log_e))])
    s_j, s_0, s_cond = nested_logit_shares(log_e, rivals, eta)
    assert np.all(s_j > 0) and np.all(s_0 > 0)
    np.testing.assert_allclose(s_cond.sum(), 1.0)
    np.testing.assert_allclose(s_j.sum() + s_0, 1.0)
    np.testing.assert_allclose(s_0, s_0[0])


def test_labor_market_generator_is_deterministic():
    a = simulate_labor_market(LaborMarketConfig(seed=1, n_markets=3, n_years=3))
    b = simulate_labor_market(LaborMarketConfig(seed=1, n_markets=3, n_years=3))
    pd.testing.assert_frame_equal(a, b, check_exact=True)
    with pytest.raises(ConfigurationError):
        LaborMarketConfig(min_plants=5, max_plants=3)
