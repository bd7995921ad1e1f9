"""Output markups, labor frictions, markdowns and productivity summaries.

Everything here is a per-observation transformation of estimated technology
and data; the only aggregation happens in the report helpers at the bottom.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .core import (ProductionParams, _check_positive, _field, log_blue_collar, log_kernel,
                   planned_output)
from .errors import ConfigurationError, DomainError
from .laborsupply import LaborSupplyParams, inverse_supply_elasticity_term, market_shares

WORKING_DAYS = 250

RECORD_COLUMNS = (
    "mu", "mu_H", "mc", "lerner", "pi_hat", "tfp", "Q_hat",
    "nu_tilde_C", "nu_tilde_D", "nu_C", "nu_D_NB", "nu_D", "F_C", "F_D",
    "markdown_C", "markdown_D_NB", "markdown_D_NN",
    "mu_valid", "lerner_positive", "nu_D_in_range",
)


@dataclass(frozen=True)
class MarketPowerRecord:
    """Market power measures for one plant-year.

    ``nu_D`` is the permanent-worker monopsony component under Nash
    bargaining; ``nu_D_NB`` is the same object under wage posting.
    Markdowns are percentages.
    """

    mu: float
    mu_H: float
    mc: float
    lerner: float
    pi_hat: float
    tfp: float
    Q_hat: float
    nu_tilde_C: float
    nu_tilde_D: float
    nu_C: float
    nu_D_NB: float
    nu_D: float
    F_C: float
    F_D: float
    markdown_C: float
    markdown_D_NB: float
    markdown_D_NN: float
    mu_valid: bool
    lerner_positive: bool
    nu_D_in_range: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _norm(obs, name: str, means) -> np.ndarray:
    return _check_positive(_field(obs, name), name) / float(_field(means, name))


def _require_means(params: ProductionParams):
    if params.means is None:
        raise ConfigurationError("production parameters must carry the geometric means")
    return params.means


def planned_output_hat(obs, params: ProductionParams, omega_L_hat, L_hat, omega_H_hat):
    """Planned output evaluated at smoothed Hicks-neutral productivity."""
    m = _require_means(params)
    return planned_output(_norm(obs, "K", m), _norm(obs, "M", m), L_hat, omega_L_hat, omega_H_hat, params)


def _log_kernel(obs, params: ProductionParams, omega_L_hat, L_hat) -> np.ndarray:
    m = _require_means(params)
    return log_kernel(_norm(obs, "K", m), _norm(obs, "M", m), L_hat, omega_L_hat, params.alpha_K,
                      params.alpha_M, params.alpha_L, params.sigma_O)


def markup_from_materials(obs, params: ProductionParams, omega_L_hat, L_hat, Q_hat) -> np.ndarray:
    """Price over marginal cost from the materials first-order condition.

    ``mu = Q_hat / S * alpha_M * M_norm**sigma_O / M * P / P_M`` with ``S`` the
    top-level CES kernel at the estimated labor-augmenting productivity.
    """
    m = _require_means(params)
    M = _check_positive(_field(obs, "M"), "M")
    log_mu = (np.log(_check_positive(Q_hat, "Q_hat")) - _log_kernel(obs, params, omega_L_hat, L_hat)
              + np.log(params.alpha_M) + params.sigma_O * np.log(M / m.M) - np.log(M)
              + np.log(_check_positive(_field(obs, "P"), "P"))
              - np.log(_check_positive(_field(obs, "P_M"), "P_M")))
    return np.exp(log_mu)


def markup_from_labor(obs, params: ProductionParams, omega_L_hat, L_hat, Q_hat) -> np.ndarray:
    """Price over marginal cost from the white-collar first-order condition.

    Agrees with :func:`markup_from_materials` whenever both conditions hold.
    """
    m = _require_means(params)
    H = _check_positive(_field(obs, "H"), "H")
    L_hat = _check_positive(L_hat, "L_hat")
    log_mu = (np.log(_check_positive(Q_hat, "Q_hat")) - _log_kernel(obs, params, omega_L_hat, L_hat)
              + np.log(params.alpha_L) + params.sigma_O * (np.asarray(omega_L_hat, dtype=float) + np.log(L_hat))
              - params.sigma_M * np.log(L_hat)
              + np.log(params.alpha_H) + params.sigma_M * np.log(H / m.H) - np.log(H)
              + np.log(_check_positive(_field(obs, "P"), "P"))
              - np.log(_check_positive(_field(obs, "W_H"), "W_H")))
    return np.exp(log_mu)


def labor_frictions(obs, params: ProductionParams) -> tuple[np.ndarray, np.ndarray]:
    """Composite frictions of temporary and permanent blue-collar workers.

    Each is the marginal revenue product implied by the white-collar
    condition and the CES nests, divided by the wage of that worker type.
    """
    m = _require_means(params)
    C_norm, D_norm, H_norm = _norm(obs, "C", m), _norm(obs, "D", m), _norm(obs, "H", m)
    bill_H = np.asarray(_field(obs, "W_H"), dtype=float) * np.asarray(_field(obs, "H"), dtype=float)
    bill_C = np.asarray(_field(obs, "W_C"), dtype=float) * np.asarray(_field(obs, "C"), dtype=float)
    bill_D = np.asarray(_field(obs, "W_D"), dtype=float) * np.asarray(_field(obs, "D"), dtype=float)
    if np.any(bill_C <= 0) or np.any(bill_D <= 0) or np.any(bill_H <= 0):
        raise DomainError("wage bills must be positive to compute labor frictions")
    log_B = log_blue_collar(C_norm, D_norm, params.alpha_C, params.alpha_D, params.sigma_I)
    log_upper = (np.log(params.alpha_B) + params.sigma_M * log_B
                 - np.log(params.alpha_H) - params.sigma_M * np.log(H_norm) + np.log(bill_H))
    log_C = np.log(params.alpha_C) + params.sigma_I * (np.log(C_norm) - log_B) - np.log(bill_C)
    log_D = np.log(params.alpha_D) + params.sigma_I * (np.log(D_norm) - log_B) - np.log(bill_D)
    return np.exp(log_upper + log_C), np.exp(log_upper + log_D)


def operating_profit(obs, mu, Q_hat) -> np.ndarray:
    """Operating profit ``Q_hat * (P - P/mu)``."""
    P = np.asarray(_field(obs, "P"), dtype=float)
    mu = np.asarray(mu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.asarray(Q_hat, dtype=float) * (P - P / mu)


def tfp(obs, omega_H_hat, omega_L_hat) -> np.ndarray:
    """Log of the cost-share weighted average of both productivity terms.

    The labor weight uses the total payroll of white-collar, temporary and
    permanent workers; the materials weight uses materials expenditure.
    """
    payroll = sum(np.asarray(_field(obs, f"W_{x}"), dtype=float) * np.asarray(_field(obs, x), dtype=float)
                  for x in ("H", "C", "D"))
    mats = np.asarray(_field(obs, "P_M"), dtype=float) * np.asarray(_field(obs, "M"), dtype=float)
    total = payroll + mats
    if np.any(total <= 0):
        raise DomainError("total variable cost must be positive")
    return np.logaddexp(np.log(payroll / total) + np.asarray(omega_L_hat, dtype=float),
                        np.log(mats / total) + np.asarray(omega_H_hat, dtype=float))


def markdown(nu):
    """Markdown in percent, ``100 * (nu - 1) / nu``."""
    nu = np.asarray(nu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 100.0 * (nu - 1.0) / nu
    return float(out) if out.ndim == 0 else out


def markdowns(nu_C, nu_D_NB, nu_D_NN=None) -> dict[str, np.ndarray]:
    """Markdowns for temporary workers and for permanent workers under both conducts."""
    out = {"markdown_C": markdown(nu_C), "markdown_D_NB": markdown(nu_D_NB)}
    if nu_D_NN is not None:
        out["markdown_D_NN"] = markdown(nu_D_NN)
    return out


def bargaining_nu(nu_NB, W, D, pi_hat, theta: float) -> np.ndarray:
    """Permanent-worker ratio of marginal revenue product to wage under Nash bargaining.

    ``1 + (nu_NB - 1) * (1 + (theta-1)/theta * pi_hat / (D * W))``.
    """
    if not theta > 0:
        raise DomainError("theta must be positive")
    k = (theta - 1.0) / theta
    e = np.asarray(nu_NB, dtype=float) - 1.0
    return 1.0 + e * (1.0 + k * np.asarray(pi_hat, dtype=float)
                      / (np.asarray(D, dtype=float) * np.asarray(W, dtype=float)))


def _supply_term(panel: pd.DataFrame, kind: str, supply: LaborSupplyParams) -> np.ndarray:
    group = panel["market_id"].astype(str) + "|" + panel["year"].astype(str)
    s_jr, _, s_cond = market_shares(panel[kind], panel[f"outside_mandays_{kind}"], group)
    return np.asarray(inverse_supply_elasticity_term(panel[f"W_{kind}"].to_numpy(dtype=float), s_jr, s_cond,
                                                     supply, panel["year"].to_numpy(),
                                                     allow_inadmissible=True), dtype=float)


def market_power_frame(panel: pd.DataFrame, params: ProductionParams, omega_L_hat, L_hat, omega_H_hat,
                       supply_C: LaborSupplyParams | None = None, supply_D: LaborSupplyParams | None = None,
                       theta: float | None = None) -> pd.DataFrame:
    """Per-observation market power measures with the columns of :data:`RECORD_COLUMNS`.

    Rows follow ``panel``.  Without labor supply parameters the monopsony and
    coordination-cost columns are NaN; without ``theta`` the bargaining
    columns are NaN.  Observations with a non-positive or non-finite markup
    stay in the frame with ``mu_valid`` False.
    """
    Q_hat = np.asarray(planned_output_hat(panel, params, omega_L_hat, L_hat, omega_H_hat), dtype=float)
    mu = markup_from_materials(panel, params, omega_L_hat, L_hat, Q_hat)
    mu_H = markup_from_labor(panel, params, omega_L_hat, L_hat, Q_hat)
    P = panel["P"].to_numpy(dtype=float)
    valid = np.isfinite(mu) & (mu > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mc = np.where(valid, P / mu, np.nan)
        lerner = np.where(valid, 1.0 - 1.0 / mu, np.nan)
    pi_hat = operating_profit(panel, mu, Q_hat)
    nt_C, nt_D = labor_frictions(panel, params)
    n = len(panel)
    nan = np.full(n, np.nan)
    nu_C = _supply_term(panel, "C", supply_C) if supply_C is not None else nan
    nu_NB = _supply_term(panel, "D", supply_D) if supply_D is not None else nan
    if theta is not None and supply_D is not None:
        nu_D = bargaining_nu(nu_NB, panel["W_D"].to_numpy(dtype=float), panel["D"].to_numpy(dtype=float),
                             pi_hat, theta)
    else:
        nu_D = nan
    with np.errstate(invalid="ignore"):
        in_range = (nu_D > 1.0) & (nu_D < nu_NB)
    md = markdowns(nu_C, nu_NB, nu_D)
    out = pd.DataFrame({
        "plant_id": panel["plant_id"].to_numpy(), "year": panel["year"].to_numpy(),
        "mu": mu, "mu_H": mu_H, "mc": mc, "lerner": lerner, "pi_hat": pi_hat,
        "tfp": tfp(panel, omega_H_hat, omega_L_hat), "Q_hat": Q_hat,
        "nu_tilde_C": nt_C, "nu_tilde_D": nt_D, "nu_C": nu_C, "nu_D_NB": nu_NB, "nu_D": nu_D,
        "F_C": nt_C - nu_C, "F_D": nt_D - nu_D,
        "markdown_C": md["markdown_C"], "markdown_D_NB": md["markdown_D_NB"], "markdown_D_NN": md["markdown_D_NN"],
        "mu_valid": valid, "lerner_positive": valid & (lerner > 0), "nu_D_in_range": in_range,
    })
    return out


def records_from_frame(frame: pd.DataFrame) -> list[MarketPowerRecord]:
    names = [f.name for f in fields(MarketPowerRecord)]
    return [MarketPowerRecord(**{k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                                 for k, v in zip(names, row)})
            for row in frame[names].itertuples(index=False, name=None)]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def revenue_weights(panel: pd.DataFrame) -> np.ndarray:
    """Log deflated revenue, used as observation weights in averages."""
    return np.log(panel["P"].to_numpy(dtype=float) * panel["Q_obs"].to_numpy(dtype=float))


def lerner_restricted(records: pd.DataFrame) -> pd.Series:
    """Mask of observations with a positive output-price Lerner index."""
    return records["lerner_positive"].astype(bool)


def _stats(x: np.ndarray) -> dict[str, float]:
    x = x[np.isfinite(x)]
    if x.size == 0:
        return {"median": np.nan, "mean": np.nan, "sd": np.nan, "iqr": np.nan, "n": 0}
    q1, q3 = np.percentile(x, [25, 75])
    return {"median": float(np.median(x)), "mean": float(np.mean(x)),
            "sd": float(np.std(x, ddof=1)) if x.size > 1 else np.nan, "iqr": float(q3 - q1), "n": int(x.size)}


def summary_table(records: pd.DataFrame) -> pd.DataFrame:
    """Median, mean, standard deviation, interquartile range and count per index.

    The bargaining ratio is summarized on its theoretical range only
    (between one and the wage-posting ratio).
    """
    rows = {
        "mu_M": records["mu"], "mu_H": records["mu_H"], "nu_C": records["nu_C"],
        "nu_D_NB": records["nu_D_NB"], "nu_D_NN": records["nu_D"].where(records["nu_D_in_range"]),
        "nu_tilde_C": records["nu_tilde_C"], "nu_tilde_D": records["nu_tilde_D"],
    }
    return pd.DataFrame({k: _stats(np.asarray(v, dtype=float)) for k, v in rows.items()}).T


def weighted_yearly(records: pd.DataFrame, panel: pd.DataFrame, columns: Sequence[str],
                    mask: np.ndarray | pd.Series | None = None) -> pd.DataFrame:
    """Yearly averages weighted by log deflated revenue."""
    w = revenue_weights(panel)
    keep = np.ones(len(records), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    out = {}
    years = records["year"].to_numpy()
    for c in columns:
        v = records[c].to_numpy(dtype=float)
        ok = keep & np.isfinite(v) & np.isfinite(w)
        df = pd.DataFrame({"year": years[ok], "wv": w[ok] * v[ok], "w": w[ok]}).groupby("year").sum()
        out[c] = df["wv"] / df["w"]
    return pd.DataFrame(out)


def plot_series(records: pd.DataFrame, panel: pd.DataFrame, column: str,
                mask: np.ndarray | pd.Series | None = None, level: float = 0.95) -> pd.DataFrame:
    """Yearly weighted mean of one measure with a normal confidence band.

    The band uses the weighted standard deviation divided by the square root
    of the yearly count.  Columns: ``year, mean, ci_low, ci_high, n``.
    """
    w = revenue_weights(panel)
    keep = np.ones(len(records), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    v = records[column].to_numpy(dtype=float)
    ok = keep & np.isfinite(v) & np.isfinite(w)
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    rows = []
    for year, idx in pd.Series(np.flatnonzero(ok)).groupby(records["year"].to_numpy()[ok]):
        i = idx.to_numpy()
        m = float(np.average(v[i], weights=w[i]))
        sd = float(np.sqrt(np.average((v[i] - m) ** 2, weights=w[i]))) if len(i) > 1 else np.nan
        half = z * sd / np.sqrt(len(i))
        rows.append((int(year), m, m - half, m + half, len(i)))
    return pd.DataFrame(rows, columns=["year", "mean", "ci_low", "ci_high", "n"])


def wage_counterfactuals(records: pd.DataFrame, panel: pd.DataFrame,
                         days: int = WORKING_DAYS) -> pd.DataFrame:
    """Annual wages actual and without labor market power (``W * nu``).

    Daily wages are scaled by ``days`` working days.  The counterfactual is the
    marginal revenue product implied by each monopsony ratio.
    """
    W_C = panel["W_C"].to_numpy(dtype=float)
    W_D = panel["W_D"].to_numpy(dtype=float)
    return pd.DataFrame({
        "plant_id": records["plant_id"].to_numpy(), "year": records["year"].to_numpy(),
        "wage_C": days * W_C, "wage_C_cf": days * W_C * records["nu_C"].to_numpy(dtype=float),
        "wage_D": days * W_D, "wage_D_cf_NB": days * W_D * records["nu_D_NB"].to_numpy(dtype=float),
        "wage_D_cf_NN": days * W_D * records["nu_D"].where(records["nu_D_in_range"]).to_numpy(dtype=float),
    })


def report(records: pd.DataFrame, panel: pd.DataFrame) -> Mapping[str, pd.DataFrame]:
    """Summary statistics, Lerner-restricted yearly averages and wage counterfactuals."""
    keep = lerner_restricted(records)
    yearly = weighted_yearly(records, panel, ["mu", "tfp", "markdown_C", "markdown_D_NB"], keep)
    yearly["log_P"] = weighted_yearly(records.assign(log_P=np.log(panel["P"].to_numpy(dtype=float))),
                                      panel, ["log_P"], keep)["log_P"]
    yearly["log_mc"] = weighted_yearly(records.assign(log_mc=np.log(records["mc"])), panel, ["log_mc"],
                                       keep)["log_mc"]
    yearly["markdown_D_NN"] = weighted_yearly(records, panel, ["markdown_D_NN"],
                                              records["nu_D_in_range"])["markdown_D_NN"]
    wages = wage_counterfactuals(records, panel)
    wage_year = wages.drop(columns="plant_id").groupby("year").mean()
    return {"summary": summary_table(records), "yearly": yearly, "wages": wage_year,
            "n_full": pd.DataFrame({"n": [len(records)], "n_lerner": [int(keep.sum())],
                                    "n_nu_D_range": [int(records["nu_D_in_range"].sum())]})}
