"""Resampling inference for the production parameters and the bargaining weight.

The wild bootstrap perturbs the fitted labor-augmenting innovations and the
fitted measurement errors with Rademacher signs, rebuilds materials and
output so that the white-collar/materials first-order condition still holds,
and re-estimates the production steps on each perturbed panel.  The pairs
bootstrap resamples plants for the bargaining regression.

Replication ``b`` always uses the ``b``-th child of the master
:class:`numpy.random.SeedSequence`, and results are assembled in replication
order, so the replication table does not depend on the number of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .core import GeometricMeans, log_f_tau, omega_L_characterization
from .errors import CesMarkdownError, ConfigurationError, EstimationError
from .estim import (SIGMA_NAMES, GmmOptions, Step1Options, Step1Result, Step2Options,
                    Step2Result, Step3Result, step1_estimate, step2_estimate, step3_estimate)
from .laborsupply import theta_from_design

#: Parameters reported by the wild bootstrap, in table order.
WILD_PARAMETERS = ("sigma_I", "sigma_M", "sigma_O", "alpha_K", "alpha_L", "alpha_M", "tau", "sigma_H",
                   "rho_H", "beta_H1", "beta_H2", "rho_L", "beta_L1", "beta_L2")
#: Parameters whose effective count requires an interior estimate of the named parameter.
INTERIOR_FILTER = {"sigma_I": "sigma_I", "sigma_M": "sigma_M", "sigma_O": "sigma_O", "alpha_K": "tau",
                   "alpha_L": "tau", "alpha_M": "tau", "tau": "tau"}
SUMMARY_COLUMNS = ("mean", "median", "sd", "max", "min", "effective")
FOC_TOL = 1e-8


def rademacher(rng: np.random.Generator, size) -> np.ndarray:
    """Independent draws from ``{-1, +1}`` with equal probability."""
    return 1.0 - 2.0 * rng.integers(0, 2, size=size).astype(float)


def replication_seeds(seed: int, reps: int) -> list[np.random.SeedSequence]:
    """Counter-based child seeds: replication ``b`` gets spawn key ``(b,)``."""
    return np.random.SeedSequence(seed).spawn(reps)


@dataclass
class BootstrapReport:
    """Summary of a bootstrap run.

    ``summary`` has one row per parameter with the mean, median, standard
    deviation, maximum and minimum over the effective replications and the
    effective count.  ``table`` holds every replication, including failed
    ones, in replication order.
    """

    requested: int
    summary: pd.DataFrame
    table: pd.DataFrame
    metadata: dict[str, Any] = field(default_factory=dict)

    def effective(self, name: str) -> int:
        return int(self.summary.loc[name, "effective"])

    def sd(self, name: str) -> float:
        return float(self.summary.loc[name, "sd"])

    def write(self, directory, prefix: str = "bootstrap") -> dict[str, str]:
        """Write the replication table and the summary as CSV; returns the paths."""
        from pathlib import Path

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"table": str(d / f"{prefix}_replications.csv"), "summary": str(d / f"{prefix}_summary.csv")}
        self.table.to_csv(paths["table"], index=False, float_format="%.12g")
        self.summary.rename_axis("parameter").to_csv(paths["summary"], float_format="%.12g")
        return paths


def summarize(table: pd.DataFrame, parameters: Sequence[str], masks: dict[str, np.ndarray],
              requested: int) -> pd.DataFrame:
    """Per-parameter statistics over the replications flagged in ``masks``."""
    rows = []
    for name in parameters:
        v = table[name].to_numpy(dtype=float)[masks[name]] if len(table) else np.empty(0)
        v = v[np.isfinite(v)]
        if v.size:
            sd = float(np.std(v, ddof=1)) if v.size > 1 else float("nan")
            rows.append((float(v.mean()), float(np.median(v)), sd, float(v.max()), float(v.min()), int(v.size)))
        else:
            rows.append((math.nan, math.nan, math.nan, math.nan, math.nan, 0))
    out = pd.DataFrame(rows, index=list(parameters), columns=list(SUMMARY_COLUMNS))
    if (out["effective"] > requested).any():  # pragma: no cover - guarded by construction
        raise EstimationError("more effective replications than requested")
    return out


# ---------------------------------------------------------------------------
# Wild bootstrap
# ---------------------------------------------------------------------------


@dataclass
class WildBootstrapOptions:
    """Settings of the wild bootstrap.

    ``draw_level`` chooses one sign per plant (``"plant"``, default), which
    keeps the serial structure of each plant's perturbation, or one per
    observation (``"observation"``).  Replications start the optimizer at
    the point estimates plus ``n_starts`` Latin-hypercube points.
    """

    draw_level: str = "plant"
    n_starts: int = 2
    include_sigma_H: bool = True
    boundary_fallback: bool = True
    step1: Step1Options | None = None
    step2: Step2Options | None = None
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.draw_level not in ("plant", "observation"):
            raise ConfigurationError("draw_level must be 'plant' or 'observation'")
        if self.n_starts < 1:
            raise ConfigurationError("n_starts must be at least 1")


@dataclass
class WildInputs:
    """Point estimates and fitted components needed to build perturbed panels.

    Arrays are aligned with ``frame``, the panel sorted by plant and year.
    ``eps_hat`` is the composite productivity net of smoothed Hicks-neutral
    productivity, so that unit signs reproduce the observed output exactly.
    """

    frame: pd.DataFrame
    means: GeometricMeans
    lag: np.ndarray
    sigmas: tuple[float, float, float]
    tau: float
    rho_L: float
    beta_L1: float
    beta_L2: float
    iota_L: dict[int, float]
    omega_L_hat: np.ndarray
    xi_L_hat: np.ndarray
    L_hat_norm: np.ndarray
    omega_H_hat: np.ndarray
    eps_hat: np.ndarray
    worker_shares: tuple[float, float, float, float]
    point: dict[str, float]

    @classmethod
    def from_fitted(cls, step1: Step1Result, step2: Step2Result, step3: Step3Result) -> "WildInputs":
        arr = step1.data["arrays"]
        xi = np.where(np.isfinite(step1.xi_L_hat), step1.xi_L_hat, 0.0)
        params = step2.params
        point = {"sigma_O": step1.sigma_O, "sigma_M": step1.sigma_M, "sigma_I": step1.sigma_I,
                 "alpha_K": params.alpha_K, "alpha_L": params.alpha_L, "alpha_M": params.alpha_M,
                 "tau": step2.tau, "sigma_H": step3.sigma_H, "rho_H": step2.rho_H, "beta_H1": step2.beta_H1,
                 "beta_H2": step2.beta_H2, "rho_L": step1.rho_L, "beta_L1": step1.beta_L1,
                 "beta_L2": step1.beta_L2}
        return cls(frame=arr.frame, means=step1.means, lag=arr.lag, sigmas=step1.sigmas, tau=step2.tau,
                   rho_L=step1.rho_L, beta_L1=step1.beta_L1, beta_L2=step1.beta_L2, iota_L=dict(step1.iota_L),
                   omega_L_hat=step1.omega_L_hat, xi_L_hat=xi, L_hat_norm=step1.L_hat_norm,
                   omega_H_hat=step3.omega_H_hat, eps_hat=step2.omega_tilde - step3.omega_H_hat,
                   worker_shares=step1.worker_shares, point=point)


def draw_signs(inputs: WildInputs, rng: np.random.Generator, level: str = "plant") -> tuple[np.ndarray, np.ndarray]:
    """Rademacher signs ``(r1, r2)`` for every row of ``inputs.frame``."""
    if level == "plant":
        codes, uniq = pd.factorize(inputs.frame["plant_id"])
        r = rademacher(rng, (2, len(uniq)))
        return r[0][codes], r[1][codes]
    r = rademacher(rng, (2, len(inputs.frame)))
    return r[0], r[1]


def perturbed_omega_L(inputs: WildInputs, r1: np.ndarray) -> np.ndarray:
    """Labor-augmenting productivity rebuilt with sign-flipped innovations.

    The first year of each plant keeps the fitted value; later years follow
    the fitted law of motion with innovations ``xi_L_hat * r1``.
    """
    f = inputs.frame
    years = f["year"].to_numpy()
    IDA = f["IDA"].to_numpy(dtype=float)
    Imp = f["Imp_lag"].to_numpy(dtype=float)
    out = np.empty(len(f))
    for i in range(len(f)):  # rows are sorted by plant and year
        j = inputs.lag[i]
        if j < 0:
            out[i] = inputs.omega_L_hat[i]
        else:
            out[i] = (inputs.iota_L.get(int(years[i]), 0.0) + inputs.rho_L * out[j] + inputs.beta_L1 * IDA[i]
                      + inputs.beta_L2 * Imp[i] + inputs.xi_L_hat[i] * r1[i])
    return out


def perturbed_panel(inputs: WildInputs, r1: np.ndarray, r2: np.ndarray) -> tuple[pd.DataFrame, np.ndarray]:
    """Panel with materials and observed output rebuilt from perturbed productivity.

    Materials absorb the change in labor-augmenting productivity at fixed
    prices and baselines: the characterization of productivity is linear in
    ``log M`` with slope ``1 - 1/sigma_O``.  Output follows the fitted
    production function plus fitted Hicks-neutral productivity and the
    sign-flipped measurement error.  Returns the panel and the perturbed
    productivity.
    """
    sigma_O = inputs.sigmas[0]
    omega_b = perturbed_omega_L(inputs, r1)
    frame = inputs.frame.copy()
    log_M = np.log(frame["M"].to_numpy(dtype=float)) + (omega_b - inputs.omega_L_hat) / (1.0 - 1.0 / sigma_O)
    M_b = np.exp(log_M)
    obs = {"K": frame["K"].to_numpy(dtype=float), "M": M_b}
    lf = np.asarray(log_f_tau(obs, inputs.tau, inputs.sigmas, omega_b, inputs.L_hat_norm, inputs.means), dtype=float)
    log_Q = math.log(inputs.means.Q) + lf + inputs.omega_H_hat + inputs.eps_hat * r2
    frame["M"] = M_b
    frame["Q_obs"] = np.exp(log_Q)
    return frame, omega_b


def foc_gap(inputs: WildInputs, frame: pd.DataFrame, omega_b: np.ndarray) -> float:
    """Largest deviation of the characterized productivity from the target on a perturbed panel."""
    obs = {c: frame[c].to_numpy(dtype=float) for c in ("H", "M", "W_H", "P_M", "C", "D")}
    implied = np.asarray(omega_L_characterization(obs, inputs.sigmas, inputs.worker_shares, inputs.means))
    return float(np.max(np.abs(implied - omega_b)))


def _interior(value: float, bounds: tuple[float, float]) -> bool:
    tol = 1e-6 * (bounds[1] - bounds[0])
    return bounds[0] + tol < value < bounds[1] - tol


def _replicate(inputs: WildInputs, opts: WildBootstrapOptions, index: int,
               child: np.random.SeedSequence | None, signs=None) -> dict[str, Any]:
    row: dict[str, Any] = {"replication": index, "status": "ok", "error": "", "fallback": False}
    try:
        if signs is None:
            rng = np.random.default_rng(child)
            r1, r2 = draw_signs(inputs, rng, opts.draw_level)
        else:
            r1, r2 = signs
        frame, omega_b = perturbed_panel(inputs, r1, r2)
        gap = foc_gap(inputs, frame, omega_b)
        row["foc_gap"] = gap
        if not gap <= FOC_TOL:
            raise EstimationError(f"perturbed panel violates the first-order condition ratio by {gap:.3g}")
        s1_opts = replace(opts.step1 or Step1Options())
        sig_bounds = [tuple(b) for b in s1_opts.bounds]
        s1_opts.gmm = replace(s1_opts.gmm, x0=list(inputs.sigmas), n_starts=opts.n_starts, seed=index)
        s1 = step1_estimate(frame, inputs.means, s1_opts)
        inner = {nm: _interior(v, b) for nm, v, b in zip(SIGMA_NAMES, s1.sigmas, sig_bounds)}
        if opts.boundary_fallback and not (inner["sigma_M"] and inner["sigma_I"]):
            keep = {"sigma_O": s1.sigma_O}
            keep.update({nm: v for nm, v in zip(SIGMA_NAMES[1:], s1.sigmas[1:]) if inner[nm]})
            free = [j for j, nm in enumerate(SIGMA_NAMES) if nm not in keep]
            fb = replace(s1_opts, fixed=keep)
            fb.gmm = replace(fb.gmm, x0=[inputs.sigmas[j] for j in free])
            s1 = step1_estimate(frame, inputs.means, fb)
            row["fallback"] = True
            inner = {nm: _interior(v, b) for nm, v, b in zip(SIGMA_NAMES, s1.sigmas, sig_bounds)}
        s2_opts = replace(opts.step2 or Step2Options())
        s2_opts.gmm = replace(s2_opts.gmm, x0=[inputs.tau], n_starts=opts.n_starts, seed=index)
        s2 = step2_estimate(frame, s1, opts=s2_opts)
        sigma_H = step3_estimate(s2).sigma_H if opts.include_sigma_H else math.nan
        p = s2.params
        row.update({"sigma_O": s1.sigma_O, "sigma_M": s1.sigma_M, "sigma_I": s1.sigma_I, "alpha_K": p.alpha_K,
                    "alpha_L": p.alpha_L, "alpha_M": p.alpha_M, "tau": s2.tau, "sigma_H": sigma_H,
                    "rho_H": s2.rho_H, "beta_H1": s2.beta_H1, "beta_H2": s2.beta_H2, "rho_L": s1.rho_L,
                    "beta_L1": s1.beta_L1, "beta_L2": s1.beta_L2})
        row.update({f"interior_{nm}": inner[nm] for nm in SIGMA_NAMES})
        row["interior_tau"] = not s2.tau_at_bound
    except (CesMarkdownError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


_TABLE_COLUMNS = (["replication", "status", "error", "fallback", "foc_gap"] + list(WILD_PARAMETERS)
                  + [f"interior_{nm}" for nm in SIGMA_NAMES] + ["interior_tau"])


def _table(rows: list[dict[str, Any]]) -> pd.DataFrame:
    table = pd.DataFrame(rows, columns=_TABLE_COLUMNS)
    for c in _TABLE_COLUMNS:
        if c.startswith("interior_") or c == "fallback":
            table[c] = table[c].eq(True)
    return table


def wild_masks(table: pd.DataFrame) -> dict[str, np.ndarray]:
    """Effective-replication masks: interior solutions for bounded parameters, success otherwise."""
    ok = (table["status"] == "ok").to_numpy()
    masks = {}
    for name in WILD_PARAMETERS:
        if name in INTERIOR_FILTER:
            masks[name] = ok & table[f"interior_{INTERIOR_FILTER[name]}"].to_numpy(dtype=bool)
        else:
            masks[name] = ok.copy()
    return masks


def wild_bootstrap(inputs: WildInputs, reps: int, seed: int,
                   options: WildBootstrapOptions | None = None) -> BootstrapReport:
    """Wild bootstrap of the production parameters.

    Parameters
    ----------
    inputs : WildInputs
        Fitted production steps, usually from :meth:`WildInputs.from_fitted`.
    reps : int
        Number of replications.
    seed : int
        Master seed; replication ``b`` draws from child ``b``.
    options : WildBootstrapOptions, optional

    Returns
    -------
    BootstrapReport
        A replication whose estimation fails is recorded with status
        ``"failed"`` and never stops the run.
    """
    opts = options or WildBootstrapOptions()
    if reps < 0:
        raise ConfigurationError("reps must be non-negative")
    children = replication_seeds(seed, reps)
    if opts.n_jobs == 1 or reps <= 1:
        rows = [_replicate(inputs, opts, b, children[b]) for b in range(reps)]
    else:
        rows = Parallel(n_jobs=opts.n_jobs)(delayed(_replicate)(inputs, opts, b, children[b]) for b in range(reps))
    table = _table(rows)
    summary = summarize(table, WILD_PARAMETERS, wild_masks(table), reps)
    return BootstrapReport(requested=reps, summary=summary, table=table,
                           metadata={"kind": "wild", "seed": seed, "draw_level": opts.draw_level,
                                     "point": dict(inputs.point)})


def identity_replication(inputs: WildInputs, options: WildBootstrapOptions | None = None) -> dict[str, Any]:
    """Replication with every sign equal to one; reproduces the point estimates."""
    ones = np.ones(len(inputs.frame))
    return _replicate(inputs, options or WildBootstrapOptions(), 0, None, signs=(ones, ones))


# ---------------------------------------------------------------------------
# Pairs bootstrap of the bargaining weight
# ---------------------------------------------------------------------------


@dataclass
class ThetaDataset:
    """Bargaining-regression sample (see :func:`cesmarkdown.laborsupply.theta_design`)."""

    design: pd.DataFrame
    instruments: list[str]
    constant: bool = False


def _theta_replicate(data: ThetaDataset, index: int, child: np.random.SeedSequence) -> dict[str, Any]:
    row: dict[str, Any] = {"replication": index, "status": "ok", "error": "", "n_plants": 0,
                           "coef": math.nan, "theta": math.nan}
    rng = np.random.default_rng(child)
    plants = pd.unique(data.design["plant_id"])
    draw = plants[rng.integers(0, len(plants), size=len(plants))]
    row["n_plants"] = int(len(pd.unique(draw)))
    try:
        if row["n_plants"] < 2:
            raise EstimationError("resample contains a single plant")
        groups = {p: g for p, g in data.design.groupby("plant_id", sort=False)}
        parts = []
        for k, p in enumerate(draw):
            g = groups[p].copy()
            g["plant_id"] = f"{p}#{k}"
            parts.append(g)
        sample = pd.concat(parts, ignore_index=True)
        res = theta_from_design(sample, data.instruments, constant=data.constant)
        row["coef"] = res.coef
        row["theta"] = res.theta
    except (CesMarkdownError, ValueError, np.linalg.LinAlgError) as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def pairs_bootstrap_theta(dataset: ThetaDataset, reps: int, seed: int, n_jobs: int = 1) -> BootstrapReport:
    """Plant-level pairs bootstrap of the bargaining weight.

    Plants are resampled with replacement (a plant drawn twice enters as two
    distinct clusters).  Replications with a non-negative coefficient, which
    would imply a bargaining weight of at least one, and degenerate
    resamples are not effective.
    """
    if reps < 0:
        raise ConfigurationError("reps must be non-negative")
    children = replication_seeds(seed, reps)
    if n_jobs == 1 or reps <= 1:
        rows = [_theta_replicate(dataset, b, children[b]) for b in range(reps)]
    else:
        rows = Parallel(n_jobs=n_jobs)(delayed(_theta_replicate)(dataset, b, children[b]) for b in range(reps))
    table = pd.DataFrame(rows, columns=["replication", "status", "error", "n_plants", "coef", "theta"])
    ok = (table["status"] == "ok").to_numpy() & (table["coef"].to_numpy(dtype=float) < 0)
    table["effective"] = ok
    summary = summarize(table, ("theta", "coef"), {"theta": ok, "coef": ok}, reps)
    return BootstrapReport(requested=reps, summary=summary, table=table, metadata={"kind": "pairs", "seed": seed})
