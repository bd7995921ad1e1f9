import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cesmarkdown.dgp import LaborMarketConfig, simulate_labor_market
from cesmarkdown.errors import ConfigurationError, EstimationError, ParameterError
from cesmarkdown.laborsupply import (LaborSupplyParams, TimeFactor, estimate_labor_supply,
                                    inverse_supply_elasticity_term, labor_dataset_from_panel, market_shares,
                                    markdown_slope, theta_design, theta_from_coef, theta_from_design, tsls)


def test_theta_worked_example():
    theta, se = theta_from_coef(-0.065, 0.020)
    assert round(theta, 3) == 0.939 and round(se, 3) == 0.018


@given(st.floats(-5.0, 0.99))
def test_theta_transform_inverts(coef):
    theta, _ = theta_from_coef(coef, 0.1)
    assert (theta - 1) / theta == pytest.approx(coef, abs=1e-12)


@given(st.lists(st.floats(0.1, 100.0), min_size=1, max_size=6), st.floats(0.1, 1000.0))
def test_market_shares_add_up(q, outside):
    q = np.array(q)
    s, s0, sc = market_shares(q, np.full(len(q), outside), np.zeros(len(q)))
    assert s.sum() + s0[0] == pytest.approx(1.0)
    assert sc.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(s / sc, s.sum())


def test_inverse_elasticity_and_slope_agree():
    p = LaborSupplyParams(gamma=0.009, gamma_t=0.0002, eta=0.245)
    W = np.array([150.0, 220.0])
    s, sc = np.array([0.05, 0.1]), np.array([0.3, 0.6])
    year = np.array([2003, 2008])
    nu = inverse_supply_elasticity_term(W, s, sc, p, year)
    a = markdown_slope(s, sc, p, year)
    np.testing.assert_allclose(nu, 1 + a / W)
    g = 0.009 + 0.0002 * (year - 2001)
    np.testing.assert_allclose(nu, 1 + 0.755 / (g * W * (1 - 0.245 * sc - 0.755 * s)))
    with pytest.raises(ParameterError):
        inverse_supply_elasticity_term(W, s, sc, LaborSupplyParams(0.01, 0.0, 1.2), year)


def test_time_factor_kinds():
    tf = TimeFactor("interval", base_year=1999, breaks=(2004, 2008))
    np.testing.assert_array_equal(tf([1999, 2003, 2004, 2010]), [0, 0, 1, 2])
    assert TimeFactor()(2005) == 4.0
    assert TimeFactor.from_dict(tf.to_dict()) == tf
    with pytest.raises(ConfigurationError):
        TimeFactor("interval", breaks=(2005, 2003))
    with pytest.raises(ConfigurationError):
        tf(1990)


def iv_sample(n=600, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 3))
    v = rng.standard_normal(n)
    x = z @ np.array([0.8, -0.5, 0.3]) + v
    y = 0.5 + 1.5 * x + 0.7 * v + rng.standard_normal(n)
    g = np.repeat(np.arange(60), n // 60)
    return y, x, z, g


def test_tsls_against_matrix_formulas():
    y, x, z, g = iv_sample()
    n = len(y)
    res = tsls(y, pd.DataFrame({"x": x}), pd.DataFrame({"const": np.ones(n)}), z, g)
    X = np.column_stack([x, np.ones(n)])
    Z = np.column_stack([z, np.ones(n)])
    P = Z @ np.linalg.pinv(Z.T @ Z) @ Z.T
    b = np.linalg.solve(X.T @ P @ X, X.T @ P @ y)
    np.testing.assert_allclose(res.coef, b, rtol=1e-10)
    u = y - X @ b
    Xh = P @ X
    B = np.linalg.inv(Xh.T @ Xh)
    meat = sum(np.outer(Xh[g == c].T @ u[g == c], Xh[g == c].T @ u[g == c]) for c in np.unique(g))
    k = 2
    V = B @ meat @ B * 60 / 59 * (n - 1) / (n - k)
    np.testing.assert_allclose(res.se, np.sqrt(np.diag(V)), rtol=1e-10)
    assert res.names == ["x", "const"] and res.n_clusters == 60 and res.J_df == 2
    assert res.first_stage_F["x"] > 50


def test_tsls_just_identified_and_failures():
    y, x, z, _ = iv_sample()
    res = tsls(y, x, np.ones(len(y)), z[:, :1])
    assert res.hansen_J == 0.0 and res.J_df == 0
    with pytest.raises(EstimationError, match="excluded instruments"):
        tsls(y, np.column_stack([x, x ** 2]), None, z[:, :1])
    with pytest.raises(EstimationError, match="rank deficient"):
        tsls(y, x, None, np.column_stack([z[:, 0], 2 * z[:, 0]]))


@pytest.fixture(scope="module")
def labor_data():
    return simulate_labor_market(LaborMarketConfig(seed=3))


def test_labor_market_generator_layout(labor_data):
    d = labor_data
    assert 400 <= len(d) <= 600
    for X in "CD":
        total = d.groupby(["market_id", "year"])[f"s_jr_{X}"].sum() + d.groupby(["market_id", "year"])[f"s0_{X}"].first()
        np.testing.assert_allclose(total, 1.0)


def test_labor_supply_recovery_and_ols_bias(labor_data):
    for X, (g, e) in (("C", (0.009, 0.245)), ("D", (0.005, 0.402))):
        iv = estimate_labor_supply(labor_data, X)
        ols = estimate_labor_supply(labor_data, X, method="ols")
        assert abs(iv["gamma"] / g - 1) < 0.3 and abs(iv["eta"] / e - 1) < 0.3
        assert ols["eta"] > iv["eta"] and ols["gamma"] < iv["gamma"]
        assert iv.supply.worker_type == X and iv.supply.eta_admissible
        assert not iv.flags


def test_labor_supply_input_checks(labor_data):
    with pytest.raises(ConfigurationError):
        estimate_labor_supply(labor_data, "H")
    with pytest.raises(ConfigurationError):
        estimate_labor_supply(labor_data, "C", method="lasso")
    with pytest.raises(ConfigurationError, match="duplicate"):
        estimate_labor_supply(labor_data, "C", instruments=["z_own", "z_own"])
    single = labor_data.assign(s_cond_C=1.0)
    with pytest.raises(EstimationError, match="single plant"):
        estimate_labor_supply(single, "C")


def test_panel_dataset_requires_outside_options(small_sim):
    ds = labor_dataset_from_panel(small_sim.frame)
    assert {"s_jr_C", "s0_D", "z_M"} <= set(ds.columns)
    with pytest.raises(ConfigurationError, match="outside_mandays_D"):
        labor_dataset_from_panel(small_sim.frame.drop(columns="outside_mandays_D"))


def test_theta_design_and_regression(small_sim):
    from cesmarkdown.markets import market_power_frame

    f, tr = small_sim.frame, small_sim.truth
    s = tr.states
    rec = market_power_frame(f, tr.params, s["omega_L"], np.exp(s["log_L_norm"]), s["omega_H"],
                             tr.config.labor_C, tr.config.labor_D)
    design, names = theta_design(f, rec, tr.config.labor_D, tr.params.sigma_I, tr.means)
    assert names == ["strike_x_lag_log_D", "log_P_M"]
    assert len(design) == len(f) - f["plant_id"].nunique()  # first years lack the lag
    res = theta_from_design(design, names)
    assert res.theta == pytest.approx(1 / (1 - res.coef))
    # at the true supply parameters the composite is exactly linear in the surplus ratio
    k = (tr.config.theta - 1) / tr.config.theta
    np.testing.assert_allclose(design["lhs"], k * design["surplus_ratio"], atol=1e-8)
    assert res.coef == pytest.approx(k, abs=1e-8)
    with pytest.raises(ConfigurationError, match="clash"):
        theta_design(f, rec, tr.config.labor_D, tr.params.sigma_I, tr.means,
                     pd.DataFrame({"lhs": np.ones(len(f))}))
