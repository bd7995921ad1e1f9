import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cesmarkdown.core import (GeometricMeans, PanelObservation, ProductionParams, ProductivityParams,
                              blue_collar_nest, dlog_f_dtau, labor_nest, log_ces2, log_f_tau,
                              log_labor_aggregate, omega_L_characterization, planned_output,
                              productivity_step, shares_from_tau, worker_shares_from_means)
from cesmarkdown.errors import ConfigurationError, DomainError, ParameterError

MEANS = GeometricMeans.from_levels(Q=5e6, K=2e6, M=3e6, H=40.0, C=120.0, D=80.0, W_H=9000.0, W_C=1500.0,
                                   W_D=2600.0, P_M=1.0)

sigmas = st.floats(0.05, 0.99)
logs = st.floats(-3.0, 3.0)


def params(sigma_O=0.501, sigma_M=0.773, sigma_I=0.222, tau=0.376, means=MEANS):
    return ProductionParams.from_tau(sigma_O, sigma_M, sigma_I, tau, means)


def direct_ces(x1, x2, a1, a2, s):
    return (a1 * x1 ** s + a2 * x2 ** s) ** (1.0 / s)


@given(logs, logs, st.floats(0.01, 0.99), sigmas)
def test_log_ces2_matches_direct_formula(l1, l2, a1, s):
    expected = math.log(direct_ces(math.exp(l1), math.exp(l2), a1, 1 - a1, s))
    assert log_ces2(l1, l2, a1, 1 - a1, s) == pytest.approx(expected, rel=1e-12, abs=1e-12)


@given(st.floats(0.01, 0.99), sigmas, st.floats(-2, 2))
def test_ces_is_homogeneous_of_degree_one(a1, s, shift):
    base = log_ces2(0.3, -0.4, a1, 1 - a1, s)
    assert log_ces2(0.3 + shift, -0.4 + shift, a1, 1 - a1, s) == pytest.approx(base + shift, abs=1e-12)


def test_sigma_one_is_linear_and_zero_rejected():
    assert np.exp(log_ces2(np.log(2.0), np.log(4.0), 0.25, 0.75, 1.0)) == pytest.approx(3.5)
    with pytest.raises(ParameterError):
        log_ces2(0.0, 0.0, 0.5, 0.5, 0.0)


def test_zero_share_drops_term():
    assert log_ces2(np.log(5.0), np.log(7.0), 0.0, 1.0, 0.4) == pytest.approx(np.log(7.0))


@given(sigmas, sigmas, sigmas, st.floats(0.05, 2.0))
def test_baseline_point_gives_baseline_output(sO, sM, sI, tau):
    p = params(sO, sM, sI, tau)
    assert blue_collar_nest(1.0, 1.0, p) == pytest.approx(1.0)
    assert labor_nest(1.0, 1.0, p) == pytest.approx(1.0)
    assert planned_output(1.0, 1.0, 1.0, 0.0, 0.0, p) == pytest.approx(MEANS.Q, rel=1e-12)


def test_planned_output_scales_with_hicks_neutral_productivity():
    p = params()
    q0 = planned_output(1.3, 0.7, 1.1, 0.2, 0.0, p)
    assert planned_output(1.3, 0.7, 1.1, 0.2, 0.5, p) == pytest.approx(q0 * math.exp(0.5))


def test_planned_output_requires_means():
    p = ProductionParams(0.5, 0.5, 0.5, 0.5, 0.2, 0.4, 0.4, 0.5, 0.5, 0.5, 0.5)
    with pytest.raises(ConfigurationError):
        planned_output(1.0, 1.0, 1.0, 0.0, 0.0, p)


@given(st.floats(0.01, 4.0))
def test_shares_from_tau_add_up(tau):
    a_K, a_M, a_L = shares_from_tau(tau, MEANS)
    assert a_K + a_M + a_L == pytest.approx(1.0)
    assert a_K == pytest.approx(tau * a_M)
    assert a_L / a_M == pytest.approx(MEANS.exp_L / MEANS.exp_M)


def test_worker_shares_are_expenditure_shares():
    a_C, a_D, a_H, a_B = worker_shares_from_means(MEANS)
    assert a_C == pytest.approx(1500 * 120 / (1500 * 120 + 2600 * 80))
    assert a_C + a_D == pytest.approx(1.0) and a_H + a_B == pytest.approx(1.0)
    assert a_H == pytest.approx(MEANS.exp_H / MEANS.exp_L)


def test_geometric_means_adding_up_enforced():
    assert MEANS.W_B * MEANS.B == pytest.approx(MEANS.exp_C + MEANS.exp_D)
    d = MEANS.to_dict()
    d["W_B"] *= 1.01
    with pytest.raises(DomainError):
        GeometricMeans.from_dict(d)
    assert GeometricMeans.from_dict(MEANS.to_dict()) == MEANS


def test_geometric_means_from_frame():
    import pandas as pd
    frame = pd.DataFrame({c: [1.0, 4.0] for c in ("Q_obs", "K", "M", "H", "C", "D", "W_H", "W_C", "W_D", "P_M")})
    m = GeometricMeans.from_frame(frame)
    assert m.K == pytest.approx(2.0)
    assert m.B == pytest.approx(math.sqrt(2.0 * 8.0))


@pytest.mark.parametrize("kw", [dict(tau=-1.0), dict(sigma_O=0.0), dict(sigma_M=1.5)])
def test_production_params_validation(kw):
    with pytest.raises(ParameterError):
        params(**kw)


def test_production_params_share_identity_enforced():
    with pytest.raises(ParameterError):
        ProductionParams(0.5, 0.5, 0.5, 0.5, 0.3, 0.4, 0.3, 0.5, 0.5, 0.5, 0.5)


def _foc_price_ratio(H, C, D, M, omega_L, sO, sM, sI, means):
    """W_H / P_M implied by the white-collar and materials conditions (analytic oracle)."""
    a_C, a_D, a_H, a_B = worker_shares_from_means(means)
    a_K, a_M, a_L = shares_from_tau(0.376, means)
    Hn, Cn, Dn, Mn = H / means.H, C / means.C, D / means.D, M / means.M
    Bn = direct_ces(Cn, Dn, a_C, a_D, sI)
    Ln = direct_ces(Hn, Bn, a_H, a_B, sM)
    dS_dH = a_L * sO * math.exp(sO * omega_L) * Ln ** (sO - 1) * Ln ** (1 - sM) * a_H * Hn ** (sM - 1) / means.H
    dS_dM = a_M * sO * Mn ** (sO - 1) / means.M
    return dS_dH / dS_dM


@settings(max_examples=60, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1),
       sigmas, sigmas, sigmas)
def test_omega_L_characterization_inverts_the_first_order_conditions(omega, h, c, d, m, sO, sM, sI):
    H, C, D, M = MEANS.H * math.exp(h), MEANS.C * math.exp(c), MEANS.D * math.exp(d), MEANS.M * math.exp(m)
    W_H = MEANS.P_M * _foc_price_ratio(H, C, D, M, omega, sO, sM, sI, MEANS)
    obs = dict(H=H, C=C, D=D, M=M, W_H=W_H, P_M=MEANS.P_M)
    got = omega_L_characterization(obs, (sO, sM, sI), worker_shares_from_means(MEANS), MEANS)
    assert got == pytest.approx(omega, abs=1e-9)


def test_omega_L_characterization_vectorized_and_domain_checked():
    obs = dict(H=np.array([40.0, 50.0]), C=np.array([120.0, 90.0]), D=np.array([80.0, 70.0]),
               M=np.array([3e6, 2e6]), W_H=np.array([9000.0, 9500.0]), P_M=np.array([1.0, 1.0]))
    ws = worker_shares_from_means(MEANS)
    vec = omega_L_characterization(obs, (0.5, 0.7, 0.3), ws, MEANS)
    one = omega_L_characterization({k: v[1] for k, v in obs.items()}, (0.5, 0.7, 0.3), ws, MEANS)
    assert vec.shape == (2,) and vec[1] == pytest.approx(one)
    obs["C"] = np.array([120.0, 0.0])
    with pytest.raises(DomainError, match="position 1"):
        omega_L_characterization(obs, (0.5, 0.7, 0.3), ws, MEANS)


def test_log_f_tau_matches_planned_output_and_derivative():
    p = params()
    K, M, L, w = 1.4 * MEANS.K, 0.8 * MEANS.M, 1.2, 0.1
    lf = log_f_tau(dict(K=K, M=M), p.tau, p.sigmas, w, L, MEANS)
    q = planned_output(K / MEANS.K, M / MEANS.M, L, w, 0.0, p)
    assert math.exp(lf) * MEANS.Q == pytest.approx(q, rel=1e-12)
    h = 1e-6
    fd = (log_f_tau(dict(K=K, M=M), p.tau + h, p.sigmas, w, L, MEANS)
          - log_f_tau(dict(K=K, M=M), p.tau - h, p.sigmas, w, L, MEANS)) / (2 * h)
    assert dlog_f_dtau(dict(K=K, M=M), p.tau, p.sigmas, w, L, MEANS) == pytest.approx(fd, rel=1e-7)


def test_labor_aggregate_consistent_with_nests():
    p = params()
    log_B, log_L = log_labor_aggregate(1.2, 0.9, 1.1, p.sigma_M, p.sigma_I, p.worker_shares)
    assert math.exp(log_B) == pytest.approx(blue_collar_nest(0.9, 1.1, p))
    assert math.exp(log_L) == pytest.approx(labor_nest(1.2, math.exp(log_B), p))


def test_panel_observation_validation():
    base = dict(plant_id=1, year=2001, market_id=1, Q_obs=1.0, P=1.0, K=1.0, M=1.0, P_M=1.0, H=1.0, W_H=1.0,
                C=1.0, W_C=1.0, D=1.0, W_D=1.0)
    PanelObservation(**base)
    with pytest.raises(DomainError, match="W_D"):
        PanelObservation(**{**base, "W_D": 0.0})
    with pytest.raises(DomainError):
        PanelObservation(**{**base, "Imp_lag": 2})


def test_productivity_step():
    pp = ProductivityParams(iota_H_t={2002: 0.1})
    got = productivity_step(0.5, pp, "H", 1.0, 1, 0.2, 2002)
    assert got == pytest.approx(0.1 + 0.88 * 0.5 - 0.031 - 0.071 + 0.2)
    with pytest.raises(ConfigurationError):
        productivity_step(0.5, pp, "H", 1.0, 1, 0.2, 2003)
    with pytest.raises(ConfigurationError):
        productivity_step(0.5, pp, "X", 1.0, 1, 0.2, 2002)
    with pytest.raises(ParameterError):
        ProductivityParams(sigma_eps=2.0)
