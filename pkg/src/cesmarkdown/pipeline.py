"""Data ingestion, run configuration and the five-step estimation pipeline.

A run reads one wide panel table, estimates the production side (steps 1 to
3), the labor supply curves (step 4) and the bargaining weight together with
per-observation market power (step 5), and writes every table as CSV into an
artifact directory alongside a ``manifest.json``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .core import GeometricMeans, PanelObservation
from .errors import CesMarkdownError, ConfigurationError, EstimationError, ValidationError
from .estim import GmmOptions, Step1Options, Step2Options, step1_estimate, step2_estimate, step3_estimate
from .markets import RECORD_COLUMNS, market_power_frame, plot_series, report
from .panel import observations_from_frame, sort_panel, validate_panel

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
ALL_STEPS = (1, 2, 3, 4, 5)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def read_panel(path: str | Path, column_map: dict[str, str] | None = None) -> pd.DataFrame:
    """Read and validate a UTF-8 CSV panel; returns a frame sorted by plant and year.

    ``column_map`` renames input columns to the documented names before
    validation.  Diagnostics cite CSV line numbers (the header is line 1).
    """
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValidationError(f"{path} is not valid UTF-8: {exc}") from None
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from None
    if not text.strip():
        raise ValidationError(f"{path} is empty")
    from io import StringIO

    frame = pd.read_csv(StringIO(text), dtype={"plant_id": str, "market_id": str}, float_precision="round_trip")
    if column_map:
        frame = frame.rename(columns=column_map)
    return validate_panel(frame)


def ingest(path: str | Path, column_map: dict[str, str] | None = None) -> list[PanelObservation]:
    """Validated observations from a CSV panel (see :func:`read_panel`)."""
    return observations_from_frame(read_panel(path, column_map))


def perpetual_inventory(K_series: Sequence[float], I_series: Sequence[float], delta: float = 0.10) -> np.ndarray:
    """Capital stock by the perpetual inventory method.

    ``K_t`` is the book value when no earlier stock is available and
    ``(1 - delta) * K_{t-1} + I_{t-1}`` otherwise.  A missing book value or
    investment breaks the chain: the next period restarts at its book value.

    Examples
    --------
    >>> perpetual_inventory([100.0, 50.0, 50.0], [20.0, 20.0, 0.0]).tolist()
    [100.0, 110.0, 119.0]
    """
    K = np.asarray(K_series, dtype=float)
    inv = np.asarray(I_series, dtype=float)
    if K.shape != inv.shape or K.ndim != 1:
        raise ConfigurationError("capital and investment series must be one-dimensional and of equal length")
    if not 0.0 <= delta <= 1.0:
        raise ConfigurationError("delta must lie in [0, 1]")
    out = np.full(K.shape, np.nan)
    for t in range(len(K)):
        if t > 0 and np.isfinite(out[t - 1]) and np.isfinite(inv[t - 1]):
            out[t] = (1.0 - delta) * out[t - 1] + inv[t - 1]
        else:
            out[t] = K[t]
    return out


def perpetual_inventory_frame(frame: pd.DataFrame, book: str = "K_book", investment: str = "I",
                              delta: float = 0.10) -> pd.Series:
    """Plant-by-plant perpetual inventory capital; the chain restarts after a gap year."""
    f = sort_panel(frame)
    out = np.empty(len(f))
    year = f["year"].to_numpy()
    for _, idx in f.groupby("plant_id", sort=False).indices.items():
        idx = np.sort(idx)
        start = 0
        for k in range(1, len(idx) + 1):
            if k == len(idx) or year[idx[k]] != year[idx[k - 1]] + 1:
                seg = idx[start:k]
                out[seg] = perpetual_inventory(f[book].to_numpy(dtype=float)[seg],
                                               f[investment].to_numpy(dtype=float)[seg], delta)
                start = k
    return pd.Series(out, index=f.index, name="K")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything a pipeline run depends on, stored as one JSON document.

    ``baseline`` optionally names a JSON file with the normalization
    baseline (the fields of :class:`~cesmarkdown.core.GeometricMeans`, at
    the top level or under ``"means"``, as in a simulation's ``.truth``
    sidecar); without it the sample geometric means are used.

    ``policy_intervals`` are ordered, disjoint ``[first_year, last_year]``
    pairs; yearly plot data carries a column naming the interval of each
    year.  ``steps`` must be a prefix ``1..k`` of the five steps.
    """

    input: str = "panel.csv"
    baseline: str | None = None
    column_map: dict[str, str] = field(default_factory=dict)
    steps: list[int] = field(default_factory=lambda: list(ALL_STEPS))
    seed: int = 0
    n_starts: int = 8
    weighting: str = "two-step"
    nm_xatol: float = 1e-10
    nm_fatol: float = 1e-16
    step1_instruments: list[str] | None = None
    step1_lagged_instruments: list[str] = field(default_factory=list)
    step2_instruments: list[str] = field(default_factory=list)
    step2_lagged_instruments: list[str] = field(default_factory=list)
    supply_instruments_C: list[str] | None = None
    supply_instruments_D: list[str] | None = None
    theta_instruments: list[str] | None = None
    bootstrap_reps: int = 0
    bootstrap_seed: int = 0
    bootstrap_draw_level: str = "plant"
    theta_bootstrap_reps: int = 0
    n_jobs: int = 1
    lerner_restriction: bool = True
    policy_intervals: list[list[int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        steps = sorted(set(int(s) for s in self.steps))
        if not steps or steps != list(range(1, len(steps) + 1)) or steps[-1] > 5:
            raise ConfigurationError(f"steps must be 1..k for k between 1 and 5, got {self.steps}")
        self.steps = steps
        prev_end = None
        for iv in self.policy_intervals:
            if len(iv) != 2 or iv[0] > iv[1]:
                raise ConfigurationError(f"policy interval {iv} must be [first_year, last_year]")
            if prev_end is not None and iv[0] <= prev_end:
                raise ConfigurationError("policy intervals must be ordered and disjoint")
            prev_end = iv[1]
        for name in ("bootstrap_reps", "theta_bootstrap_reps"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration key(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read configuration {path}: {exc}") from None
        cfg = cls.from_dict(data)
        if not Path(cfg.input).is_absolute():
            cfg.input = str((path.parent / cfg.input).resolve())
        if cfg.baseline is not None and not Path(cfg.baseline).is_absolute():
            cfg.baseline = str((path.parent / cfg.baseline).resolve())
        return cfg

    def means(self, panel: pd.DataFrame) -> GeometricMeans:
        """Normalization baseline: the configured file or the sample geometric means."""
        if self.baseline is None:
            return GeometricMeans.from_frame(panel)
        try:
            data = json.loads(Path(self.baseline).read_text(encoding="utf-8"))
            return GeometricMeans.from_dict(data.get("means", data))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigurationError(f"cannot read baseline {self.baseline}: {exc}") from None

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def gmm(self) -> GmmOptions:
        return GmmOptions(weighting=self.weighting, n_starts=self.n_starts, seed=self.seed,
                          nm_xatol=self.nm_xatol, nm_fatol=self.nm_fatol)

    def referenced_columns(self) -> list[str]:
        cols: list[str] = []
        for name in ("step1_instruments", "step1_lagged_instruments", "step2_instruments",
                     "step2_lagged_instruments", "supply_instruments_C", "supply_instruments_D",
                     "theta_instruments"):
            cols += list(getattr(self, name) or [])
        return cols

    def check_columns(self, frame: pd.DataFrame) -> None:
        missing = [c for c in self.referenced_columns() if c not in frame.columns]
        if missing:
            raise ValidationError(f"configured column(s) not in the panel: {', '.join(sorted(set(missing)))}")


def policy_label(years: Sequence[int], intervals: Sequence[Sequence[int]]) -> list[str]:
    out = []
    for y in years:
        lab = ""
        for a, b in intervals:
            if a <= y <= b:
                lab = f"{a}-{b}"
        out.append(lab)
    return out


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


class StepFailure(EstimationError):
    """A pipeline step failed; ``step`` names it."""

    def __init__(self, step: str, cause: Exception):
        super().__init__(f"{step} failed: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


class _Artifacts:
    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, frame: pd.DataFrame, index: bool = False) -> None:
        frame.to_csv(self.out / name, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
        self.files.append(name)

    def add(self, name: str) -> None:
        self.files.append(name)


def _gmm_table(res, step: str) -> pd.DataFrame:
    return pd.DataFrame({"step": step, "parameter": res.names, "estimate": res.params, "se": res.se})


def _diagnostics_row(res, step: str) -> dict[str, Any]:
    return {"step": step, "objective": res.objective, "J": res.J, "J_df": res.J_df, "J_pvalue": res.J_pvalue,
            "jacobian_rank": res.jacobian_rank, "n_parameters": len(res.names), "n_moments": res.n_moments,
            "n_obs": res.n_obs, "mean_abs_instrument_corr": res.mean_abs_corr, "converged": res.converged,
            "at_bound": ";".join(res.at_bound)}


def _library_versions() -> dict[str, str]:
    return {"cesmarkdown": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pd.__version__, "python": platform.python_version()}


def run_pipeline(config: RunConfig, out_dir: str | Path) -> Path:
    """Run the configured steps and write all outputs to ``out_dir``.

    Steps: (1) CES exponents and labor-augmenting productivity, (2) capital
    distortion and the Hicks-neutral process, (3) state-space separation of
    productivity and measurement error, (4) labor supply of temporary and
    permanent workers, (5) bargaining weight and market power.  Optional
    bootstrap runs follow steps 3 and 5.

    The manifest is written on success and on failure.  A failing step raises
    :class:`StepFailure` after persisting the outputs of the earlier steps.
    """
    from .bootstrap import ThetaDataset, WildBootstrapOptions, WildInputs, pairs_bootstrap_theta, wild_bootstrap
    from .laborsupply import estimate_labor_supply, estimate_theta, labor_dataset_from_panel, theta_design

    out = Path(out_dir)
    art = _Artifacts(out)
    manifest: dict[str, Any] = {"config": config.to_dict(), "config_hash": config.digest(),
                                "seeds": {"gmm": config.seed, "bootstrap": config.bootstrap_seed},
                                "versions": _library_versions(), "steps_requested": config.steps,
                                "steps_completed": [], "status": "running", "outputs": art.files}

    def write_manifest() -> None:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")

    current = "ingest"
    try:
        panel = read_panel(config.input, config.column_map)
        config.check_columns(panel)
        means = config.means(panel)
        gmm = config.gmm()
        diag = []

        current = "step 1"
        s1 = step1_estimate(panel, means, Step1Options(extra=config.step1_instruments,
                                                       extra_lagged=config.step1_lagged_instruments, gmm=gmm))
        frame = s1.data["arrays"].frame
        tables = [_gmm_table(s1.gmm, "1")]
        diag.append(_diagnostics_row(s1.gmm, "1"))
        prod = pd.DataFrame({"plant_id": frame["plant_id"], "year": frame["year"], "omega_L": s1.omega_L_hat,
                             "xi_L": s1.xi_L_hat, "L_hat_norm": s1.L_hat_norm})
        manifest["steps_completed"].append(1)

        if 2 in config.steps:
            current = "step 2"
            s2 = step2_estimate(panel, s1, opts=Step2Options(extra=config.step2_instruments,
                                                            extra_lagged=config.step2_lagged_instruments, gmm=gmm))
            tables.append(_gmm_table(s2.gmm, "2"))
            p = s2.params
            shares = pd.DataFrame({"step": "2", "parameter": ["alpha_K", "alpha_M", "alpha_L", "alpha_H",
                                                              "alpha_B", "alpha_C", "alpha_D"],
                                   "estimate": [p.alpha_K, p.alpha_M, p.alpha_L, p.alpha_H, p.alpha_B,
                                                p.alpha_C, p.alpha_D], "se": np.nan})
            tables.append(shares)
            diag.append(_diagnostics_row(s2.gmm, "2"))
            prod["omega_tilde"] = s2.omega_tilde
            prod["log_f"] = s2.log_f_hat
            manifest["steps_completed"].append(2)

        if 3 in config.steps:
            current = "step 3"
            s3 = step3_estimate(s2)
            tables.append(pd.DataFrame({"step": "3", "parameter": ["sigma_H"], "estimate": [s3.sigma_H],
                                        "se": [s3.se_sigma_H]}))
            prod["omega_H"] = s3.omega_H_hat
            prod["xi_H"] = s3.xi_H_hat
            prod["eps"] = s3.eps_hat
            manifest["steps_completed"].append(3)

        art.csv("production_parameters.csv", pd.concat(tables, ignore_index=True))
        art.csv("gmm_diagnostics.csv", pd.DataFrame(diag))
        art.csv("productivity.csv", prod)

        if 3 in config.steps and config.bootstrap_reps > 0:
            current = "wild bootstrap"
            wb = wild_bootstrap(WildInputs.from_fitted(s1, s2, s3), config.bootstrap_reps, config.bootstrap_seed,
                                WildBootstrapOptions(draw_level=config.bootstrap_draw_level, n_jobs=config.n_jobs))
            for name in wb.write(out, "wild_bootstrap").values():
                art.add(Path(name).name)

        if 4 in config.steps:
            current = "step 4"
            ds = labor_dataset_from_panel(frame)
            supply = {}
            rows = []
            for X, cols in (("C", config.supply_instruments_C), ("D", config.supply_instruments_D)):
                for method in ("iv", "ols"):
                    r = estimate_labor_supply(ds, X, instruments=cols, method=method)
                    if method == "iv":
                        supply[X] = r
                    for nm in r.names:
                        rows.append({"worker_type": X, "method": method, "parameter": nm, "estimate": r[nm],
                                     "se": r.se_of(nm), "first_stage_F": r.first_stage_F.get(nm, np.nan),
                                     "flags": ";".join(r.flags)})
            art.csv("labor_supply.csv", pd.DataFrame(rows))
            manifest["steps_completed"].append(4)

        if 5 in config.steps:
            current = "step 5"
            sC, sD = supply["C"].supply, supply["D"].supply
            pre = market_power_frame(frame, s2.params, s1.omega_L_hat, s1.L_hat_norm, s3.omega_H_hat, sC, sD)
            th = estimate_theta(frame, pre, sD, s1.sigma_I, means, config.theta_instruments)
            art.csv("theta.csv", pd.DataFrame({"parameter": ["coef", "theta"], "estimate": [th.coef, th.theta],
                                               "se": [th.coef_se, th.se],
                                               "flags": [";".join(th.flags)] * 2}))
            theta = th.theta if np.isfinite(th.theta) else None
            records = market_power_frame(frame, s2.params, s1.omega_L_hat, s1.L_hat_norm, s3.omega_H_hat,
                                         sC, sD, theta)
            art.csv("market_power.csv", records)
            # reports use the records as persisted so that regenerating them is exact
            _write_reports(art, _read_records(out), frame, config)
            if config.theta_bootstrap_reps > 0:
                current = "theta bootstrap"
                design, znames = theta_design(frame, pre, sD, s1.sigma_I, means, config.theta_instruments)
                tb = pairs_bootstrap_theta(ThetaDataset(design, znames), config.theta_bootstrap_reps,
                                           config.bootstrap_seed, n_jobs=config.n_jobs)
                for name in tb.write(out, "theta_bootstrap").values():
                    art.add(Path(name).name)
            manifest["steps_completed"].append(5)
    except CesMarkdownError as exc:
        manifest["status"] = "failed"
        manifest["failed_step"] = current
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        write_manifest()
        if current == "ingest" and isinstance(exc, (ValidationError, ConfigurationError)):
            raise
        raise StepFailure(current, exc) from exc
    manifest["status"] = "ok"
    write_manifest()
    return out


def _write_reports(art: _Artifacts, records: pd.DataFrame, frame: pd.DataFrame, config: RunConfig) -> None:
    """Summary table, yearly weighted series, plot data and wage counterfactuals."""
    rep = report(records, frame)
    art.csv("market_power_summary.csv", rep["summary"].rename_axis("measure"), index=True)
    art.csv("yearly_weighted.csv", rep["yearly"].rename_axis("year"), index=True)
    art.csv("wage_counterfactuals.csv", rep["wages"].rename_axis("year"), index=True)
    art.csv("sample_counts.csv", rep["n_full"])
    keep = records["lerner_positive"].astype(bool) if config.lerner_restriction else None
    series = {"markup": ("mu", keep), "tfp": ("tfp", keep), "markdown_C": ("markdown_C", keep),
              "markdown_D_NB": ("markdown_D_NB", keep),
              "markdown_D_NN": ("markdown_D_NN", records["nu_D_in_range"].astype(bool))}
    for name, (col, mask) in series.items():
        pdata = plot_series(records, frame, col, mask)
        if config.policy_intervals:
            pdata["policy_interval"] = policy_label(pdata["year"].tolist(), config.policy_intervals)
        art.csv(f"plot_{name}.csv", pdata)


def _read_records(out: Path) -> pd.DataFrame:
    records = pd.read_csv(out / "market_power.csv", dtype={"plant_id": str}, float_precision="round_trip")
    if list(records.columns) != ["plant_id", "year"] + list(RECORD_COLUMNS):
        raise ValidationError("market_power.csv does not have the expected columns")
    return records


def regenerate_reports(out_dir: str | Path, config: RunConfig | None = None) -> list[str]:
    """Rebuild the report tables of an artifact directory from its market-power CSV."""
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        raise ConfigurationError(f"{out} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    config = config or RunConfig.from_dict(manifest["config"])
    if not (out / "market_power.csv").exists():
        raise ConfigurationError(f"{out} has no market_power.csv; run step 5 first")
    frame = read_panel(config.input, config.column_map)
    records = _read_records(out)
    art = _Artifacts(out)
    _write_reports(art, records, frame, config)
    return art.files
