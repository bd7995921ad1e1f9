"""Nested-logit labor supply, two-stage least squares and the bargaining parameter.

Labor supply of worker type ``X`` to plant ``j`` in market ``r``:

    log(s_j / s_0) = c + b*t + gamma_t * W_j + eta * log(s_{j|r}) + xi_j

with ``gamma_t = gamma + gamma_trend * factor(year)``.  The implied inverse
supply elasticity enters the wage-setting conditions through

    nu = 1 + (1 - eta) / (gamma_t * W * (1 - eta*s_{j|r} - (1 - eta)*s_j)).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ConfigurationError, DomainError, EstimationError, ParameterError


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeFactor:
    """Factor multiplying the time-varying wage coefficient.

    ``kind="linear"`` gives ``year - base_year``.  ``kind="interval"`` gives the
    zero-based index of the interval containing the year, where ``breaks``
    lists the first year of each interval after the first.
    """

    kind: str = "linear"
    base_year: int = 2001
    breaks: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "interval"):
            raise ConfigurationError(f"unknown time-factor kind {self.kind!r}")
        if list(self.breaks) != sorted(set(self.breaks)):
            raise ConfigurationError("interval breaks must be strictly increasing")
        if self.kind == "interval" and self.breaks and self.breaks[0] <= self.base_year:
            raise ConfigurationError("interval breaks must come after base_year")

    def __call__(self, year):
        year = np.asarray(year)
        if self.kind == "linear":
            out = (year - self.base_year).astype(float)
        else:
            if np.any(year < self.base_year):
                raise ConfigurationError("year precedes the first policy interval")
            out = np.searchsorted(np.asarray(self.breaks), year, side="right").astype(float)
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "base_year": self.base_year, "breaks": list(self.breaks)}

    @classmethod
    def from_dict(cls, data) -> "TimeFactor":
        return cls(kind=data.get("kind", "linear"), base_year=int(data.get("base_year", 2001)),
                   breaks=tuple(int(b) for b in data.get("breaks", ())))


@dataclass(frozen=True)
class LaborSupplyParams:
    """Labor supply parameters for one worker type.

    ``theta`` is the plant's bargaining weight; it only matters for the
    permanent type and equals one under wage posting.
    """

    gamma: float
    gamma_t: float
    eta: float
    intercept: float = 0.0
    trend: float = 0.0
    worker_type: str = "C"
    time_factor: TimeFactor = field(default_factory=TimeFactor)
    theta: float = 1.0

    def __post_init__(self) -> None:
        if self.worker_type not in ("C", "D"):
            raise ConfigurationError("worker_type must be 'C' or 'D'")
        if not 0.0 < self.theta <= 1.0:
            raise ParameterError("theta must lie in (0, 1]")

    @property
    def eta_admissible(self) -> bool:
        return 0.0 < self.eta < 1.0

    def gamma_at(self, year):
        """Wage coefficient ``gamma + gamma_t * factor(year)``."""
        return self.gamma + self.gamma_t * self.time_factor(year)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["time_factor"] = self.time_factor.to_dict()
        return out

    @classmethod
    def from_dict(cls, data) -> "LaborSupplyParams":
        data = dict(data)
        data["time_factor"] = TimeFactor.from_dict(data.get("time_factor", {}))
        return cls(**data)


# ---------------------------------------------------------------------------
# Shares and inverse elasticities
# ---------------------------------------------------------------------------


def market_shares(quantity, outside, group) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(s_j, s_0, s_{j|r})`` for plant quantities grouped by market-year.

    ``outside`` is the outside-option quantity of each row's market-year (it
    is the same for every row of a group).
    """
    quantity = np.asarray(quantity, dtype=float)
    outside = np.asarray(outside, dtype=float)
    codes = pd.factorize(np.asarray(group))[0]
    inside = np.bincount(codes, weights=quantity)[codes]
    total = inside + outside
    if np.any(quantity <= 0) or np.any(outside <= 0):
        raise DomainError("quantities and outside-option sizes must be positive")
    return quantity / total, outside / total, quantity / inside


def inverse_supply_elasticity_term(W, s_jr, s_cond, params: LaborSupplyParams, year,
                                   *, allow_inadmissible: bool = False):
    """Ratio of marginal revenue product to wage implied by wage posting.

    Returns ``1 + (1-eta) / (gamma_t * W * (1 - eta*s_cond - (1-eta)*s_jr))``.
    Observations with a non-positive denominator get NaN; callers decide how to
    flag them.
    """
    if not params.eta_admissible and not allow_inadmissible:
        raise ParameterError(f"eta = {params.eta!r} lies outside (0, 1); pass allow_inadmissible=True to override")
    W = np.asarray(W, dtype=float)
    eta = params.eta
    g = params.gamma_at(year)
    den = np.asarray(g * W * (1.0 - eta * np.asarray(s_cond) - (1.0 - eta) * np.asarray(s_jr)), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, 1.0 + (1.0 - eta) / den, np.nan)
    return float(out) if out.ndim == 0 else out


def markdown_slope(s_jr, s_cond, params: LaborSupplyParams, year):
    """``a = (1-eta) / (gamma_t * (1 - eta*s_cond - (1-eta)*s_jr))`` so that ``nu = 1 + a/W``."""
    eta = params.eta
    return (1.0 - eta) / (params.gamma_at(year) * (1.0 - eta * np.asarray(s_cond) - (1.0 - eta) * np.asarray(s_jr)))


# ---------------------------------------------------------------------------
# Two-stage least squares
# ---------------------------------------------------------------------------


@dataclass
class IvResult:
    """Output of :func:`tsls`.

    ``se`` is cluster-robust when clusters were given and heteroskedasticity
    robust otherwise; ``se_robust`` is always the latter.
    """

    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    se_robust: np.ndarray
    cov: np.ndarray
    first_stage_F: dict[str, float]
    hansen_J: float
    J_pvalue: float
    J_df: int
    n_obs: int
    n_clusters: int
    residuals: np.ndarray = field(repr=False)
    flags: list[str] = field(default_factory=list)
    supply: LaborSupplyParams | None = None

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self.names.index(name)])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"coef": self.coef, "se": self.se, "se_robust": self.se_robust}, index=self.names)


def _as_matrix(x, n: int | None = None, prefix: str = "x") -> tuple[np.ndarray, list[str]]:
    if x is None:
        return np.empty((n or 0, 0)), []
    if isinstance(x, pd.DataFrame):
        return x.to_numpy(dtype=float), [str(c) for c in x.columns]
    if isinstance(x, pd.Series):
        return x.to_numpy(dtype=float)[:, None], [str(x.name) if x.name is not None else prefix + "0"]
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr, [f"{prefix}{i}" for i in range(arr.shape[1])]


def _collinear_columns(mat: np.ndarray, names: Sequence[str], tol: float = 1e-10) -> list[str]:
    """Names of columns that are linear combinations of earlier columns."""
    bad: list[str] = []
    keep: list[int] = []
    scale = np.maximum(np.linalg.norm(mat, axis=0), 1e-300)
    for j in range(mat.shape[1]):
        cols = keep + [j]
        sub = mat[:, cols] / scale[cols]
        s = np.linalg.svd(sub, compute_uv=False)
        if s[-1] <= tol * s[0] or not np.isfinite(s).all():
            bad.append(names[j])
        else:
            keep.append(j)
    return bad


def tsls(y, X_endog, X_exog, Z, cluster_ids=None) -> IvResult:
    """Two-stage least squares with robust and cluster-robust covariances.

    Parameters
    ----------
    y : array_like, shape (n,)
    X_endog : array_like or DataFrame, shape (n, k1)
        Endogenous regressors.
    X_exog : array_like or DataFrame, shape (n, k2)
        Included exogenous regressors (add a constant column yourself).
    Z : array_like or DataFrame, shape (n, l1)
        Excluded instruments, ``l1 >= k1``.
    cluster_ids : array_like, optional
        Cluster labels for the covariance; plain robust covariance otherwise.

    Returns
    -------
    IvResult
        Coefficients are ordered endogenous first, then exogenous.

    Notes
    -----
    The cluster-robust covariance uses the small-sample factor
    ``G/(G-1) * (n-1)/(n-k)``; the heteroskedasticity-robust one uses
    ``n/(n-k)``.  Hansen's J is computed at the two-step efficient GMM
    estimate with a heteroskedasticity-robust (or clustered) weight.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    Xe, ne = _as_matrix(X_endog, n, "endog")
    Xx, nx = _as_matrix(X_exog, n, "exog")
    Ze, nz = _as_matrix(Z, n, "z")
    X = np.hstack([Xe, Xx])
    Zf = np.hstack([Ze, Xx])
    names = ne + nx
    k = X.shape[1]
    if Ze.shape[1] < Xe.shape[1]:
        raise EstimationError(f"{Ze.shape[1]} excluded instruments for {Xe.shape[1]} endogenous regressors")
    if not n > k:
        raise EstimationError(f"need more observations ({n}) than parameters ({k})")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X)) and np.all(np.isfinite(Zf))):
        raise EstimationError("non-finite values in regression data")
    bad = _collinear_columns(Zf, nz + nx)
    if bad:
        raise EstimationError(f"instrument matrix is rank deficient; collinear columns: {bad}")
    # first stage
    Pz_coef, *_ = np.linalg.lstsq(Zf, X, rcond=None)
    Xhat = Zf @ Pz_coef
    bad = _collinear_columns(Xhat, names)
    if bad:
        raise EstimationError(f"first stage is rank deficient; regressors not identified: {bad}")
    XtX = Xhat.T @ Xhat
    beta = np.linalg.solve(XtX, Xhat.T @ y)
    u = y - X @ beta
    bread = np.linalg.inv(XtX)

    hu = Xhat * u[:, None]
    cov_rob = bread @ (hu.T @ hu) @ bread * (n / (n - k))
    if cluster_ids is not None:
        codes = pd.factorize(np.asarray(cluster_ids))[0]
        G = int(codes.max()) + 1
        sums = np.zeros((G, k))
        np.add.at(sums, codes, hu)
        if G < 2:
            raise EstimationError("cluster-robust covariance needs at least two clusters")
        cov = bread @ (sums.T @ sums) @ bread * (G / (G - 1)) * ((n - 1) / (n - k))
    else:
        G = n
        cov = cov_rob

    # plain first-stage F for the excluded instruments, per endogenous regressor
    F: dict[str, float] = {}
    q = Ze.shape[1]
    L = Zf.shape[1]
    for j, name in enumerate(ne):
        xj = Xe[:, j]
        ru = xj - Zf @ np.linalg.lstsq(Zf, xj, rcond=None)[0]
        if Xx.shape[1]:
            rr = xj - Xx @ np.linalg.lstsq(Xx, xj, rcond=None)[0]
        else:
            rr = xj
        rss_u = float(ru @ ru)
        rss_r = float(rr @ rr)
        F[name] = max((rss_r - rss_u) / q, 0.0) / (rss_u / (n - L)) if rss_u > 0 else float("inf")

    J = 0.0
    pval = 1.0
    df = L - k
    if df > 0:
        zu = Zf * u[:, None]
        if cluster_ids is not None:
            zs = np.zeros((G, L))
            np.add.at(zs, codes, zu)
            S = zs.T @ zs / n
        else:
            S = zu.T @ zu / n
        Sinv = np.linalg.pinv(S)
        ZX = Zf.T @ X / n
        Zy = Zf.T @ y / n
        b2 = np.linalg.solve(ZX.T @ Sinv @ ZX, ZX.T @ Sinv @ Zy)
        g = Zf.T @ (y - X @ b2) / n
        J = max(float(n * g @ Sinv @ g), 0.0)
        pval = float(stats.chi2.sf(J, df))
    return IvResult(names=names, coef=beta, se=np.sqrt(np.diag(cov)), se_robust=np.sqrt(np.diag(cov_rob)),
                    cov=cov, first_stage_F=F, hansen_J=J, J_pvalue=pval, J_df=max(df, 0), n_obs=n,
                    n_clusters=G, residuals=u)


# ---------------------------------------------------------------------------
# Labor supply estimation
# ---------------------------------------------------------------------------


def labor_dataset_from_panel(frame: pd.DataFrame) -> pd.DataFrame:
    """Build the labor-supply dataset layout from an establishment panel.

    Requires ``outside_mandays_C`` and ``outside_mandays_D``.  Shares are
    computed within (market, year).  Instrument columns (``z_`` prefix) are
    carried over.
    """
    for col in ("outside_mandays_C", "outside_mandays_D"):
        if col not in frame or frame[col].isna().any():
            raise ConfigurationError(f"labor-supply estimation needs column {col!r} without missing values")
    group = frame["market_id"].astype(str) + "|" + frame["year"].astype(str)
    out = frame[["plant_id", "market_id", "year"]].copy()
    for X in ("C", "D"):
        s_jr, s_0, s_cond = market_shares(frame[X], frame[f"outside_mandays_{X}"], group)
        out[f"W_{X}"] = frame[f"W_{X}"].to_numpy(dtype=float)
        out[X] = frame[X].to_numpy(dtype=float)
        out[f"s_jr_{X}"] = s_jr
        out[f"s0_{X}"] = s_0
        out[f"s_cond_{X}"] = s_cond
    for col in frame.columns:
        if col.startswith("z_"):
            out[col] = frame[col].to_numpy(dtype=float)
    return out


def default_supply_instruments(dataset: pd.DataFrame, worker_type: str) -> list[str]:
    """All ``z_`` columns except those specific to the other worker type."""
    other = "D" if worker_type == "C" else "C"
    return [c for c in dataset.columns if c.startswith("z_") and not c.endswith("_" + other)]


def estimate_labor_supply(dataset: pd.DataFrame, worker_type: str, *, instruments: Sequence[str] | None = None,
                          time_factor: TimeFactor | None = None, method: str = "iv",
                          cluster: str | None = "plant_id") -> IvResult:
    """Estimate nested-logit labor supply for one worker type.

    Regresses ``log(s_j/s_0)`` on the wage, the wage times the time factor,
    the log conditional share, a linear trend and a constant.  With
    ``method="iv"`` the first three are instrumented by the chosen
    instruments and their interactions with the time factor; ``method="ols"``
    treats them as exogenous.

    Returns
    -------
    IvResult
        Coefficients ``gamma``, ``gamma_t``, ``eta``, ``trend``,
        ``intercept``; ``supply`` holds the corresponding
        :class:`LaborSupplyParams`.  The flag ``"eta_outside_unit_interval"``
        is set when the nesting estimate is inadmissible.
    """
    if worker_type not in ("C", "D"):
        raise ConfigurationError("worker_type must be 'C' or 'D'")
    if method not in ("iv", "ols"):
        raise ConfigurationError("method must be 'iv' or 'ols'")
    X = worker_type
    year = dataset["year"].to_numpy()
    if time_factor is None:
        time_factor = TimeFactor("linear", base_year=int(year.min()))
    s_jr = dataset[f"s_jr_{X}"].to_numpy(dtype=float)
    s_0 = dataset[f"s0_{X}"].to_numpy(dtype=float)
    s_cond = dataset[f"s_cond_{X}"].to_numpy(dtype=float)
    W = dataset[f"W_{X}"].to_numpy(dtype=float)
    if np.any(s_jr <= 0) or np.any(s_0 <= 0) or np.any(s_cond <= 0):
        raise DomainError("shares must be positive")
    log_cond = np.log(s_cond)
    if np.ptp(log_cond) < 1e-12:
        raise EstimationError("eta is not identified: conditional shares do not vary "
                              "(every market has a single plant)")
    f = np.asarray(time_factor(year), dtype=float)
    y = np.log(s_jr / s_0)
    endog = pd.DataFrame({"gamma": W, "gamma_t": W * f, "eta": log_cond})
    exog = pd.DataFrame({"trend": (year - year.min()).astype(float), "intercept": np.ones(len(y))})
    if np.ptp(f) == 0:
        endog = endog.drop(columns="gamma_t")
    if method == "ols":
        Z = endog.copy()
    else:
        cols = list(instruments) if instruments is not None else default_supply_instruments(dataset, X)
        if not cols:
            raise ConfigurationError("no instruments available for labor-supply estimation")
        if len(set(cols)) != len(cols):
            raise ConfigurationError(f"duplicate labor-supply instruments: {cols}")
        Z =dataset[cols].astype(float).reset_index(drop=True)
        if "gamma_t" in endog:
            for c in cols:
                Z[f"{c}_x_factor"] = Z[c].to_numpy() * f
    clusters = dataset[cluster].to_numpy() if cluster is not None else None
    res = tsls(y, endog, exog, Z, clusters)
    gt = res["gamma_t"] if "gamma_t" in res.names else 0.0
    res.supply = LaborSupplyParams(gamma=res["gamma"], gamma_t=gt, eta=res["eta"], intercept=res["intercept"],
                                   trend=res["trend"], worker_type=X, time_factor=time_factor)
    if not res.supply.eta_admissible:
        res.flags.append("eta_outside_unit_interval")
    if np.any(np.asarray(res.supply.gamma_at(year)) <= 0):
        res.flags.append("wage_coefficient_not_positive")
    return res


# ---------------------------------------------------------------------------
# Bargaining parameter
# ---------------------------------------------------------------------------


def theta_from_coef(coef: float, se: float = float("nan")) -> tuple[float, float]:
    """Map the coefficient ``(theta - 1)/theta`` to ``theta`` with a delta-method standard error.

    ``theta = 1/(1 - coef)`` and ``dtheta/dcoef = theta**2``.

    Examples
    --------
    >>> [round(v, 3) for v in theta_from_coef(-0.065, 0.020)]
    [0.939, 0.018]
    """
    if coef >= 1.0:
        raise DomainError("coefficient must be below one")
    theta = 1.0 / (1.0 - coef)
    return theta, abs(se) * theta * theta


@dataclass
class ThetaResult:
    """Bargaining-weight estimate together with the underlying regression."""

    theta: float
    se: float
    coef: float
    coef_se: float
    iv: IvResult
    data: pd.DataFrame = field(repr=False)
    flags: list[str] = field(default_factory=list)


def theta_regression_data(panel: pd.DataFrame, records: pd.DataFrame, supply_D: LaborSupplyParams,
                          sigma_I: float, means) -> pd.DataFrame:
    """Left-hand composite and surplus ratio of the bargaining equation.

    ``records`` must provide ``nu_tilde_D``, ``F_C`` and ``pi_hat`` aligned
    with ``panel``.  The permanent-worker inverse elasticity ``e_D`` comes
    from ``supply_D`` and the panel's shares.
    """
    group = panel["market_id"].astype(str) + "|" + panel["year"].astype(str)
    s_jr, _, s_cond = market_shares(panel["D"], panel["outside_mandays_D"], group)
    W_D = panel["W_D"].to_numpy(dtype=float)
    W_C = panel["W_C"].to_numpy(dtype=float)
    e_D = inverse_supply_elasticity_term(W_D, s_jr, s_cond, supply_D, panel["year"].to_numpy()) - 1.0
    D_norm = panel["D"].to_numpy(dtype=float) / means.D
    C_norm = panel["C"].to_numpy(dtype=float) / means.C
    proxy = (records["F_C"].to_numpy(dtype=float) * (W_C / means.W_C) / (W_D / means.W_D)
             * (D_norm / C_norm) ** (sigma_I - 1.0))
    lhs = (records["nu_tilde_D"].to_numpy(dtype=float) - (e_D + 1.0) - proxy) / e_D
    ratio = records["pi_hat"].to_numpy(dtype=float) / (panel["D"].to_numpy(dtype=float) * W_D)
    return pd.DataFrame({"plant_id": panel["plant_id"].to_numpy(), "year": panel["year"].to_numpy(),
                         "lhs": lhs, "surplus_ratio": ratio, "e_D": e_D, "F_D_proxy": proxy})


def theta_design(panel: pd.DataFrame, records: pd.DataFrame, supply_D: LaborSupplyParams, sigma_I: float,
                 means, instruments: pd.DataFrame | Sequence[str] | None = None) -> tuple[pd.DataFrame, list[str]]:
    """Estimation sample of the bargaining equation.

    Returns the rows with finite inputs (``plant_id``, ``year``, ``lhs``,
    ``surplus_ratio`` and the instrument columns) and the instrument names.
    Default instruments are strike intensity times last year's log permanent
    employment and the log materials price.
    """
    data = theta_regression_data(panel, records, supply_D, sigma_I, means)
    if instruments is None:
        from .panel import lag_index, lagged
        lag = lag_index(panel)
        lag_D = lagged(np.log(panel["D"].to_numpy(dtype=float)), lag)
        Zdf = pd.DataFrame({"strike_x_lag_log_D": panel["strike_intensity"].to_numpy(dtype=float) * lag_D,
                            "log_P_M": np.log(panel["P_M"].to_numpy(dtype=float))})
    elif isinstance(instruments, pd.DataFrame):
        Zdf = instruments.reset_index(drop=True).astype(float)
    else:
        Zdf = panel[list(instruments)].reset_index(drop=True).astype(float)
    clash = set(Zdf.columns) & set(data.columns)
    if clash:
        raise ConfigurationError(f"instrument names clash with regression columns: {sorted(clash)}")
    design = pd.concat([data[["plant_id", "year", "lhs", "surplus_ratio"]].reset_index(drop=True), Zdf], axis=1)
    ok = np.isfinite(design.drop(columns=["plant_id", "year"]).to_numpy(dtype=float)).all(axis=1)
    return design.loc[ok].reset_index(drop=True), list(Zdf.columns)


def theta_from_design(design: pd.DataFrame, instruments: Sequence[str], *, constant: bool = False,
                      cluster: str | None = "plant_id") -> ThetaResult:
    """2SLS of the bargaining equation on a prepared design (see :func:`theta_design`)."""
    exog = pd.DataFrame({"intercept": np.ones(len(design))}) if constant else None
    clusters = design[cluster].to_numpy() if cluster is not None else None
    iv = tsls(design["lhs"].to_numpy(dtype=float), design[["surplus_ratio"]], exog,
              design[list(instruments)].reset_index(drop=True), clusters)
    coef = iv["surplus_ratio"]
    cse = iv.se_of("surplus_ratio")
    flags: list[str] = []
    if coef >= 0:
        flags.append("theta_not_below_one")
    theta, se = theta_from_coef(coef, cse) if coef < 1 else (float("nan"), float("nan"))
    return ThetaResult(theta=theta, se=se, coef=coef, coef_se=cse, iv=iv, data=design, flags=flags)


def estimate_theta(panel: pd.DataFrame, records: pd.DataFrame, supply_D: LaborSupplyParams,
                   sigma_I: float, means, instruments: pd.DataFrame | Sequence[str] | None = None,
                   *, constant: bool = False, cluster: str | None = "plant_id") -> ThetaResult:
    """Estimate the plant's bargaining weight from the permanent-worker friction.

    Regresses the composite left-hand side on the surplus ratio
    ``Pi/(D*W_D)`` by 2SLS and maps the coefficient ``(theta-1)/theta`` to
    ``theta``.  Default instruments are strike intensity times last year's
    log permanent employment and the log materials price.  Rows with missing
    inputs (for example the first year of each plant) are dropped.

    The flag ``"theta_not_below_one"`` marks a non-negative coefficient.
    """
    design, znames = theta_design(panel, records, supply_D, sigma_I, means, instruments)
    return theta_from_design(design, znames, constant=constant, cluster=cluster)
