"""Acceptance checks: Monte Carlo recovery against the generator plus exact identities.

Every test records one PASS/FAIL line, printed in the terminal summary.  The
twenty Monte Carlo replications are shared by several checks and take about
fifteen minutes on one core; the wild bootstrap check adds about as much.
"""

import dataclasses
import json
import warnings

import numpy as np
import pandas as pd
import pytest

import _montecarlo
from cesmarkdown.bootstrap import (WILD_PARAMETERS, WildInputs, identity_replication, summarize, wild_bootstrap,
                                   wild_masks)
from cesmarkdown.core import omega_L_characterization, worker_shares_from_means
from cesmarkdown.dgp import DgpConfig, LaborMarketConfig, simulate_labor_market, simulate_panel, write_simulation
from cesmarkdown.estim import step1_estimate, step2_estimate, step3_estimate
from cesmarkdown.kalman import get_backend
from cesmarkdown.laborsupply import estimate_labor_supply, theta_from_coef
from cesmarkdown.markets import lerner_restricted, market_power_frame, markdown, report
from cesmarkdown.pipeline import RunConfig, run_pipeline
from test_kalman import BACKENDS, dense_oracle

pytestmark = pytest.mark.slow

RESULTS: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)


@pytest.fixture(scope="module")
def mc():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return _montecarlo.run(_montecarlo.N_REPLICATIONS)


@pytest.fixture(scope="module")
def default_sim():
    return simulate_panel(DgpConfig(seed=0))


def truth_records(sim, theta=None):
    tr, s = sim.truth, sim.truth.states
    return market_power_frame(sim.frame, tr.params, s["omega_L"], np.exp(s["log_L_norm"]), s["omega_H"],
                              tr.config.labor_C, tr.config.labor_D, theta=theta)


def test_criterion_01_production_recovery(mc):
    tol = {"sigma_O": 0.05, "rho_L": 0.05, "rho_H": 0.05, "sigma_M": 0.15, "sigma_I": 0.15, "tau": 0.15}
    med = {k: float(np.median([r.error(k) for r in mc])) for k in tol}
    slowest = max(r.seconds_estimate for r in mc)
    ok = all(med[k] <= tol[k] for k in tol) and slowest <= 600 and len(mc) == 20
    record(1, ok, "median |error| " + ", ".join(f"{k}={v:.3f}" for k, v in med.items())
           + f"; slowest replication {slowest:.0f}s")
    assert ok


def test_criterion_02_noiseless_exactness():
    cfg = DgpConfig(seed=0, measurement_error=False)
    cfg = dataclasses.replace(cfg, productivity=dataclasses.replace(cfg.productivity, sigma_H=0.0, sigma_L=0.0))
    sim = simulate_panel(cfg)
    tr, prod = sim.truth, cfg.productivity
    s1 = step1_estimate(sim.frame, tr.means)
    s2 = step2_estimate(sim.frame, s1)
    truth1 = {"sigma_O": cfg.sigma_O, "sigma_M": cfg.sigma_M, "sigma_I": cfg.sigma_I, "rho_L": prod.rho_L,
              "beta_L1": prod.beta_L1, "beta_L2": prod.beta_L2}
    truth1.update({f"iota_L_{y}": prod.iota_L_t.get(y, 0.0) for y in s1.iota_L})
    truth2 = {"tau": cfg.tau, "rho_H": prod.rho_H, "beta_H1": prod.beta_H1, "beta_H2": prod.beta_H2}
    truth2.update({f"iota_H_{y}": prod.iota_H_t.get(y, 0.0) for y in s2.iota_H})
    err = max([abs(s1.gmm[k] - v) for k, v in truth1.items()] + [abs(s2.gmm[k] - v) for k, v in truth2.items()])
    assert set(truth1) == set(s1.gmm.names) and set(truth2) == set(s2.gmm.names)
    omega = omega_L_characterization(sim.frame, tr.params.sigmas, worker_shares_from_means(tr.means), tr.means)
    rt = float(np.max(np.abs(omega - tr.states["omega_L"].to_numpy())))
    ok = err <= 1e-3 and rt <= 1e-10
    record(2, ok, f"max parameter error {err:.1e} over {len(truth1) + len(truth2)} parameters; "
                  f"omega_L round trip {rt:.1e}")
    assert ok


def test_criterion_03_kalman(mc):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for backend in BACKENDS:
        kern = get_backend(backend)
        for _ in range(100):
            T = int(rng.integers(1, 5))
            rho, s2 = rng.uniform(-0.95, 0.95), rng.uniform(0.0, 3.0)
            y = 2.0 * rng.standard_normal(T)
            starts, lengths = np.array([0], dtype=np.int64), np.array([T], dtype=np.int64)
            ll = kern.filter_loglik(y, starts, lengths, rho, s2)
            xi, eps, lag, _ = kern.smooth(y, starts, lengths, rho, s2)
            ll_o, xi_o, eps_o, lag_o = dense_oracle(y, rho, s2)
            worst = max(worst, abs(ll - ll_o), *np.abs(xi - xi_o), *np.abs(eps - eps_o), *np.abs(lag - lag_o))
    sig_err = max(r.error("sigma_H") for r in mc)
    corr = min(r.corr_omega_H for r in mc)
    ok = worst <= 1e-8 and sig_err <= 0.10 and corr > 0.9
    record(3, ok, f"oracle gap {worst:.1e} ({', '.join(BACKENDS)}); max |sigma_H error| {sig_err:.3f}; "
                  f"min corr(omega_H) {corr:.3f} over {len(mc)} replications")
    assert ok


def test_criterion_04_markup_identity(default_sim):
    rec = truth_records(default_sim, default_sim.truth.config.theta)
    gap = float(np.max(np.abs(rec["mu"] - rec["mu_H"])))
    const = float(np.max(np.abs(rec["mu"] - default_sim.truth.config.markup)))
    bad = rec.copy()
    rows = bad.index[:7]
    bad.loc[rows, ["mu", "lerner", "lerner_positive"]] = [0.95, 1 - 1 / 0.95, False]
    n_kept = int(lerner_restricted(bad).sum())
    counts = report(bad, default_sim.frame)["n_full"].iloc[0]
    ok = (gap <= 1e-10 and const <= 1e-8 and n_kept == len(rec) - 7
          and counts["n"] == len(rec) and counts["n_lerner"] == len(rec) - 7)
    record(4, ok, f"max |mu_M - mu_H| {gap:.1e} on {len(rec)} observations; constant markup error {const:.1e}; "
                  f"Lerner restriction keeps {n_kept} of {len(rec)} after 7 invalid")
    assert ok


def test_criterion_05_labor_supply():
    truth = {"C": (0.009, 0.245), "D": (0.005, 0.402)}
    worst, sizes, directions = 0.0, [], 0
    for seed in range(20):
        data = simulate_labor_market(LaborMarketConfig(seed=seed))
        sizes.append(len(data))
        agree = True
        for X, (g, e) in truth.items():
            iv = estimate_labor_supply(data, X)
            ols = estimate_labor_supply(data, X, method="ols")
            worst = max(worst, abs(iv["gamma"] / g - 1), abs(iv["eta"] / e - 1))
            agree &= ols["eta"] > iv["eta"] and ols["gamma"] < iv["gamma"]
        directions += agree
    ok = worst <= 0.30 and directions >= 18
    record(5, ok, f"max relative error {worst:.2f} over 20 samples of {min(sizes)}-{max(sizes)} plant-years; "
                  f"bias directions match in {directions}/20")
    assert ok


def test_criterion_06_conduct(mc):
    errors = [abs(r.theta - 0.939) for r in mc]
    theta, se = theta_from_coef(-0.065, 0.020)
    example = round(theta, 3) == 0.939 and round(se, 3) == 0.018
    ok = max(errors) <= 0.05 and example
    record(6, ok, f"max |theta - 0.939| {max(errors):.3f} (median {np.median(errors):.3f}); "
                  f"worked example -> ({theta:.3f}, {se:.3f})")
    assert ok


def test_criterion_07_markdown_identities(default_sim):
    rec, s = truth_records(default_sim, default_sim.truth.config.theta), default_sim.truth.states
    md = float(np.max(np.abs(rec["markdown_C"] - 100 * (s["nu_C"] - 1) / s["nu_C"])))
    decomposition = (np.array_equal(rec["nu_tilde_C"], rec["nu_C"] + rec["F_C"])
                     and np.array_equal(rec["nu_tilde_D"], rec["nu_D"] + rec["F_D"], equal_nan=True))
    costly = simulate_panel(DgpConfig(seed=0, n_plants=60, n_years=5, n_markets=5, g_C=40.0, g_D=60.0))
    rc = truth_records(costly, costly.truth.config.theta)
    decomposition &= (np.array_equal(rc["nu_tilde_C"], rc["nu_C"] + rc["F_C"])
                      and np.array_equal(rc["nu_tilde_D"], rc["nu_D"] + rc["F_D"], equal_nan=True))
    headline = round(markdown(1.667), 1)
    ok = md <= 1e-8 and decomposition and headline == 40.0
    record(7, ok, f"markdown_C gap {md:.1e}; nu_tilde = nu + F exact: {decomposition}; "
                  f"markdown(1.667) = {headline}%")
    assert ok


def test_criterion_08_identification_ranks(mc):
    full = [r.rank_step1 == r.n_params_step1 and r.rank_step2 == r.n_params_step2 for r in mc]
    r0 = mc[0]
    ok = all(full)
    record(8, ok, f"full column rank on {sum(full)}/{len(mc)} draws "
                  f"(step 1: {r0.rank_step1} of {r0.n_params_step1}, step 2: {r0.rank_step2} of "
                  f"{r0.n_params_step2})")
    assert ok


def test_criterion_09_bootstrap(mc):
    sim = simulate_panel(DgpConfig(seed=1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s1 = step1_estimate(sim.frame, sim.truth.means)
        s2 = step2_estimate(sim.frame, s1)
        s3 = step3_estimate(s2)
    inputs = WildInputs.from_fitted(s1, s2, s3)
    row = identity_replication(inputs)
    id_gap = max(abs(row[k] - v) for k, v in inputs.point.items())
    boot = wild_bootstrap(inputs, 100, 1)
    sd_boot = float(boot.summary.loc["sigma_O", "sd"])
    sd_mc = float(np.std([r.estimates["sigma_O"] for r in mc], ddof=1))
    ratio = sd_boot / sd_mc
    # filter semantics: the reported effective counts follow the interior and status masks
    masks = wild_masks(boot.table)
    again = summarize(boot.table, WILD_PARAMETERS, masks, 100)
    ok_status = boot.table["status"] == "ok"
    expected_sigma_I = int((ok_status & boot.table["interior_sigma_I"].eq(True)).sum())
    expected_tau = int((ok_status & boot.table["interior_tau"].eq(True)).sum())
    semantics = (again.equals(boot.summary) and int(boot.summary.loc["sigma_I", "effective"]) == expected_sigma_I
                 and int(boot.summary.loc["alpha_K", "effective"]) == expected_tau
                 and int(boot.summary.loc["rho_H", "effective"]) == int(ok_status.sum()))
    ok = id_gap <= 1e-6 and 0.5 <= ratio <= 2.0 and semantics
    record(9, ok, f"identity replication gap {id_gap:.1e}; sd(sigma_O) bootstrap {sd_boot:.4f} vs Monte Carlo "
                  f"{sd_mc:.4f} (ratio {ratio:.2f}); effective counts consistent: {semantics}")
    assert ok


def test_criterion_10_determinism(small_sim, tmp_path):
    a = simulate_panel(DgpConfig(seed=11, n_plants=80, n_years=8, n_markets=5))
    write_simulation(a, tmp_path / "sim_a.csv")
    write_simulation(small_sim, tmp_path / "sim_b.csv")
    same_sim = (tmp_path / "sim_a.csv").read_bytes() == (tmp_path / "sim_b.csv").read_bytes()
    base = dict(input=str(tmp_path / "sim_a.csv"), baseline=str(tmp_path / "sim_a.truth"), n_starts=1,
                bootstrap_reps=2, theta_bootstrap_reps=20, bootstrap_seed=5)
    outs = {}
    for name, jobs in (("first", 1), ("second", 1), ("parallel", 2)):
        outs[name] = run_pipeline(RunConfig(**base, n_jobs=jobs), tmp_path / name)

    def contents(d):
        return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}

    first, second, parallel = (contents(outs[k]) for k in ("first", "second", "parallel"))
    across_runs = first == second and (outs["first"] / "manifest.json").read_bytes() == \
        (outs["second"] / "manifest.json").read_bytes()
    across_workers = first == parallel
    m1 = json.loads((outs["first"] / "manifest.json").read_text())
    m3 = json.loads((outs["parallel"] / "manifest.json").read_text())
    for m in (m1, m3):
        m["config"].pop("n_jobs"), m.pop("config_hash")
    across_workers &= m1 == m3
    n_files = len(first)
    boot = pd.read_csv(outs["first"] / "wild_bootstrap_replications.csv")
    ok = same_sim and across_runs and across_workers and n_files >= 15 and len(boot) == 2
    record(10, ok, f"simulation identical: {same_sim}; {n_files} output files identical across runs: "
                   f"{across_runs}, across 1 and 2 workers: {across_workers}")
    assert ok
