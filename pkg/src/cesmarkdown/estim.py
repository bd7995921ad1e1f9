"""Generalized method of moments and the two production-side estimation steps.

Moment systems are written as ``u(theta, b) = y(theta) - X(theta) @ b``:
``theta`` holds the parameters that enter non-linearly and ``b`` those that
enter linearly (persistence, covariate loadings and year effects).  For a
given ``theta`` and weighting matrix the optimal ``b`` has a closed form, so
the numerical search runs over ``theta`` only.  The concentrated objective
has the same minimizer as the joint one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, stats
from scipy.stats import qmc

from .core import (GeometricMeans, ProductionParams, log_f_tau, log_labor_aggregate,
                   omega_L_characterization, worker_shares_from_means)
from .errors import ConfigurationError, DiagnosticError, EstimationError
from .panel import lag_index, lagged, sort_panel

SIGMA_BOUNDS = (0.005, 0.995)
SIGMA_NAMES = ("sigma_O", "sigma_M", "sigma_I")
DEFAULT_SHIFTERS = ("z_M", "z_H")
TAU_BOUNDS = (1e-3, 5.0)
_PENALTY = 1e20


# ---------------------------------------------------------------------------
# Generic engine
# ---------------------------------------------------------------------------


@dataclass
class MomentSystem:
    """Moment conditions ``E[Z * u] = 0`` with ``u = y(theta) - X(theta) @ b``.

    Parameters
    ----------
    model : callable
        ``model(theta, data) -> (y, X)``.  ``X`` may have zero columns.
    instruments : callable or ndarray
        ``instruments(data, theta) -> Z`` with one row per residual, or a fixed
        matrix.
    names : sequence of str
        Names of the non-linear parameters ``theta``.
    bounds : sequence of (low, high)
        Box constraints for ``theta``.
    linear_names : sequence of str
        Names of the columns of ``X``.
    year_effects : mapping
        Year -> position in ``linear_names`` of that year's effect.
    clusters : callable, optional
        ``clusters(data) -> labels`` for the moment covariance; rows are
        treated as independent when omitted.
    """

    model: Callable[[np.ndarray, Any], tuple[np.ndarray, np.ndarray]]
    instruments: Callable[[Any, np.ndarray], np.ndarray] | np.ndarray
    names: Sequence[str]
    bounds: Sequence[tuple[float, float]]
    linear_names: Sequence[str] = ()
    year_effects: Mapping[int, int] = field(default_factory=dict)
    clusters: Callable[[Any], np.ndarray] | None = None

    @classmethod
    def from_residual(cls, residual: Callable[[np.ndarray, Any], np.ndarray], instruments, names, bounds,
                      clusters=None) -> "MomentSystem":
        """System defined by a plain residual function (no profiled parameters)."""
        def model(theta, data):
            u = np.asarray(residual(theta, data), dtype=float)
            return u, np.empty((len(u), 0))
        return cls(model=model, instruments=instruments, names=list(names), bounds=list(bounds),
                   clusters=clusters)

    @property
    def all_names(self) -> list[str]:
        return list(self.names) + list(self.linear_names)

    def Z(self, data, theta) -> np.ndarray:
        if callable(self.instruments):
            return np.asarray(self.instruments(data, theta), dtype=float)
        return np.asarray(self.instruments, dtype=float)

    def residual(self, params_full, data) -> np.ndarray:
        """Residual at a full parameter vector (non-linear then linear)."""
        params_full = np.asarray(params_full, dtype=float)
        k = len(self.names)
        y, X = self.model(params_full[:k], data)
        return y - X @ params_full[k:]

    def moments(self, params_full, data) -> np.ndarray:
        """Sample moment vector ``Z'u / n``."""
        k = len(self.names)
        Z = self.Z(data, np.asarray(params_full[:k], dtype=float))
        u = self.residual(params_full, data)
        return Z.T @ u / len(u)


@dataclass
class GmmOptions:
    """Optimizer and weighting settings.

    ``weighting`` is ``"two-step"`` (default), ``"identity"`` or ``"2sls"``
    (one step with the inverse second-moment matrix of the instruments).
    """

    weighting: str = "two-step"
    n_starts: int = 8
    seed: int = 0
    x0: Sequence[float] | None = None
    starts: Sequence[Sequence[float]] | None = None
    nm_xatol: float = 1e-10
    nm_fatol: float = 1e-16
    maxiter: int = 4000
    ridge: float = 1e-8

    def __post_init__(self) -> None:
        if self.weighting not in ("two-step", "identity", "2sls"):
            raise ConfigurationError(f"unknown weighting {self.weighting!r}")
        if self.n_starts < 1:
            raise ConfigurationError("n_starts must be at least 1")


@dataclass
class GmmResult:
    """Outcome of :func:`gmm_estimate`."""

    names: list[str]
    params: np.ndarray
    n_nonlinear: int
    objective: float
    J: float
    J_pvalue: float
    J_df: int
    instrument_residual_corr: np.ndarray
    converged: bool
    jacobian_rank: int
    jacobian_cond: float
    se: np.ndarray
    weighting: str
    n_obs: int
    n_moments: int
    residuals: np.ndarray = field(repr=False)
    at_bound: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    @property
    def theta(self) -> np.ndarray:
        return self.params[: self.n_nonlinear]

    @property
    def mean_abs_corr(self) -> float:
        c = self.instrument_residual_corr
        c = c[np.isfinite(c)]
        return float(np.mean(np.abs(c))) if c.size else float("nan")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.params)))


def _cluster_codes(system: MomentSystem, data, n: int) -> np.ndarray | None:
    if system.clusters is None:
        return None
    labels = np.asarray(system.clusters(data))
    if len(labels) != n:
        raise ConfigurationError("cluster labels do not match the number of residuals")
    return pd.factorize(labels)[0]


def _moment_cov(Z: np.ndarray, u: np.ndarray, codes: np.ndarray | None) -> np.ndarray:
    n = len(u)
    zu = Z * u[:, None]
    if codes is None:
        return zu.T @ zu / n
    sums = np.zeros((int(codes.max()) + 1, Z.shape[1]))
    np.add.at(sums, codes, zu)
    return sums.T @ sums / n


def _safe_inverse(S: np.ndarray, ridge: float, notes: list[str], label: str) -> np.ndarray:
    s = np.linalg.svd(S, compute_uv=False)
    if not np.all(np.isfinite(s)) or s[-1] <= 1e-12 * s[0]:
        lam = ridge * max(float(np.trace(S)) / len(S), 1e-300)
        notes.append(f"{label} is singular (condition {s[0] / max(s[-1], 1e-300):.3g}); "
                     f"ridge {lam:.3g} added")
        S = S + lam * np.eye(len(S))
    return np.linalg.inv(S)


class _Profiler:
    """Concentrated GMM objective over the non-linear parameters."""

    def __init__(self, system: MomentSystem, data, W: np.ndarray | None):
        self.system = system
        self.data = data
        self.W = W

    def evaluate(self, theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(all="ignore"):
            try:
                y, X = self.system.model(theta, self.data)
                Z = self.system.Z(self.data, theta)
            except (ValueError, FloatingPointError, ArithmeticError):
                return None
            n = len(y)
            if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
                return None
            W = self.W if self.W is not None else np.linalg.pinv(Z.T @ Z / n)
            if X.shape[1]:
                ZX = Z.T @ X / n
                Zy = Z.T @ y / n
                A = ZX.T @ W @ ZX
                try:
                    b = np.linalg.solve(A, ZX.T @ W @ Zy)
                except np.linalg.LinAlgError:
                    b = np.linalg.lstsq(A, ZX.T @ W @ Zy, rcond=None)[0]
                u = y - X @ b
            else:
                b = np.empty(0)
                u = y
            g = Z.T @ u / n
            obj = float(g @ W @ g)
        if not math.isfinite(obj):
            return None
        return obj, b, u, Z, W

    def __call__(self, theta) -> float:
        out = self.evaluate(theta)
        return _PENALTY if out is None else out[0]


def _minimize(prof: _Profiler, bounds: np.ndarray, starts: list[np.ndarray], opts: GmmOptions):
    """Nelder-Mead from every start, then quasi-Newton polishing of the best."""
    best_x, best_f, best_ok = None, math.inf, False
    for x0 in starts:
        x0 = np.clip(x0, bounds[:, 0], bounds[:, 1])
        res = optimize.minimize(prof, x0, method="Nelder-Mead", bounds=bounds,
                                options={"xatol": opts.nm_xatol, "fatol": opts.nm_fatol,
                                         "maxiter": opts.maxiter, "maxfev": 2 * opts.maxiter,
                                         "adaptive": len(x0) > 2})
        if res.fun < best_f:
            best_x, best_f, best_ok = np.asarray(res.x, dtype=float), float(res.fun), bool(res.success)
    if best_x is None or best_f >= _PENALTY:
        return best_x, best_f, False
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = optimize.minimize(prof, best_x, method="L-BFGS-B", bounds=bounds,
                                options={"ftol": 1e-16, "gtol": 1e-14, "maxiter": 500})
    if res.fun < best_f:
        best_x, best_f = np.asarray(res.x, dtype=float), float(res.fun)
        best_ok = best_ok or bool(res.success)
    # a final simplex pass from the polished point tightens flat directions
    res = optimize.minimize(prof, best_x, method="Nelder-Mead", bounds=bounds,
                            options={"xatol": opts.nm_xatol, "fatol": opts.nm_fatol,
                                     "maxiter": opts.maxiter, "adaptive": len(best_x) > 2})
    if res.fun <= best_f:
        best_x, best_f = np.asarray(res.x, dtype=float), float(res.fun)
        best_ok = best_ok or bool(res.success)
    return best_x, best_f, best_ok


def _starting_points(bounds: np.ndarray, opts: GmmOptions, extra: list[np.ndarray]) -> list[np.ndarray]:
    k = len(bounds)
    pts: list[np.ndarray] = [np.asarray(p, dtype=float) for p in extra]
    if opts.starts is not None:
        pts.extend(np.asarray(p, dtype=float) for p in opts.starts)
    if opts.n_starts > 0 and k > 0:
        sampler = qmc.LatinHypercube(d=k, seed=np.random.default_rng(opts.seed))
        unit = sampler.random(opts.n_starts)
        pts.extend(qmc.scale(unit, bounds[:, 0], bounds[:, 1]))
    return pts


def _moment_jacobian(system: MomentSystem, data, params_full: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of the moment vector, step ``1e-5*max(1,|p|)``."""
    k = len(params_full)
    cols = []
    for j in range(k):
        h = 1e-5 * max(1.0, abs(params_full[j]))
        up = params_full.copy()
        dn = params_full.copy()
        up[j] += h
        dn[j] -= h
        cols.append((system.moments(up, data) - system.moments(dn, data)) / (2.0 * h))
    return np.column_stack(cols) if cols else np.empty((0, 0))


def _rank_and_cond(J: np.ndarray) -> tuple[int, float]:
    if not np.all(np.isfinite(J)):
        raise DiagnosticError("non-finite entries in the moment Jacobian")
    s = np.linalg.svd(J, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0, float("inf")
    rank = int(np.sum(s > 1e-7 * s[0]))
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    return rank, cond


def identification_rank_check(system: MomentSystem, params_at, data) -> tuple[int, float]:
    """Numerical rank and condition number of the moment Jacobian at a point.

    The Jacobian of the stacked sample moments with respect to every
    parameter (non-linear and linear) is taken by central differences; the
    rank counts singular values above ``1e-7`` times the largest.
    """
    J = _moment_jacobian(system, data, np.asarray(params_at, dtype=float))
    return _rank_and_cond(J)


def gmm_estimate(system: MomentSystem, data, weighting: str | None = None,
                 opts: GmmOptions | None = None) -> GmmResult:
    """Minimize ``gbar' W gbar`` over the system's parameters.

    The first step weights moments by the inverse second-moment matrix of the
    instruments (or the identity when requested); the two-step estimator then
    re-weights by the inverse of the first-step moment covariance.  Linear
    parameters are profiled out exactly at every trial value of the
    non-linear ones.  When the first-step objective is zero to rounding (an
    exactly specified system) the second step is skipped.  Optimizer failure
    is recorded in ``converged`` and the best point found is returned.
    """
    opts = opts or GmmOptions()
    weighting = weighting or opts.weighting
    if weighting not in ("two-step", "identity", "2sls"):
        raise ConfigurationError(f"unknown weighting {weighting!r}")
    names = list(system.names)
    k = len(names)
    bounds = np.asarray(system.bounds, dtype=float).reshape(k, 2) if k else np.empty((0, 2))
    if k and np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ConfigurationError("infeasible parameter bounds")
    notes: list[str] = []
    theta0 = np.asarray(opts.x0, dtype=float) if opts.x0 is not None else None

    probe_theta = theta0 if theta0 is not None else (bounds.mean(axis=1) if k else np.empty(0))
    y0, X0 = system.model(probe_theta, data)
    Z0 = system.Z(data, probe_theta)
    n, L = Z0.shape
    p = k + X0.shape[1]
    if L < p:
        raise ConfigurationError(f"{L} moment conditions for {p} parameters")
    codes = _cluster_codes(system, data, n)

    W1 = np.eye(L) if weighting == "identity" else None

    def solve(W, extra):
        prof = _Profiler(system, data, W)
        if k:
            x, f, ok = _minimize(prof, bounds, _starting_points(bounds, opts, extra), opts)
            if x is None:
                raise EstimationError("GMM objective is not finite at any starting point")
        else:
            x, ok = np.empty(0), True
        out = prof.evaluate(x)
        if out is None:
            raise EstimationError("GMM objective is not finite at the reported optimum")
        return x, ok, out

    extra = [theta0] if theta0 is not None else []
    theta, ok, (obj, b, u, Z, W) = solve(W1, extra)
    exact = obj <= 1e-20 * max(float(np.mean(y0 ** 2)), 1e-300)
    if weighting == "two-step" and exact:
        # the moments are solved exactly, so the weight matrix is irrelevant
        # and the residual covariance is degenerate
        notes.append("first-step moments are zero to rounding; second step skipped")
    elif weighting == "two-step":
        S = _moment_cov(Z, u, codes)
        W2 = _safe_inverse(S, opts.ridge, notes, "moment covariance")
        theta, ok2, (obj, b, u, Z, W) = solve(W2, [theta] + extra)
        ok = ok and ok2

    params = np.concatenate([theta, b])
    all_names = names + list(system.linear_names)
    J = float(n * obj)
    df = L - p
    pval = float(stats.chi2.sf(J, df)) if df > 0 else float("nan")

    with np.errstate(all="ignore"):
        zc = Z - Z.mean(axis=0)
        uc = u - u.mean()
        denom = np.sqrt((zc ** 2).sum(axis=0) * (uc ** 2).sum())
        corr = np.where(denom > 0, zc.T @ uc / np.where(denom > 0, denom, 1.0), np.nan)

    try:
        G = _moment_jacobian(system, data, params)
        rank, cond = _rank_and_cond(G)
        S = _moment_cov(Z, u, codes)
        A = G.T @ W @ G
        Ainv = np.linalg.pinv(A)
        V = Ainv @ G.T @ W @ S @ W @ G @ Ainv / n
        se = np.sqrt(np.clip(np.diag(V), 0.0, None))
    except DiagnosticError as exc:
        notes.append(str(exc))
        rank, cond, se = 0, float("inf"), np.full(p, np.nan)

    at_bound = []
    for j in range(k):
        lo, hi = bounds[j]
        tol = 1e-6 * (hi - lo)
        if theta[j] - lo <= tol or hi - theta[j] <= tol:
            at_bound.append(names[j])
    first = "identity" if weighting == "identity" else "inverse instrument second moments"
    return GmmResult(names=all_names, params=params, n_nonlinear=k, objective=obj, J=J, J_pvalue=pval,
                     J_df=df, instrument_residual_corr=corr, converged=bool(ok), jacobian_rank=rank,
                     jacobian_cond=cond, se=se, weighting=weighting, n_obs=n, n_moments=L, residuals=u,
                     at_bound=at_bound, warnings=notes,
                     metadata={"first_step_weight": first, "clustered": codes is not None,
                               "n_starts": opts.n_starts, "seed": opts.seed})


# ---------------------------------------------------------------------------
# Panel preparation shared by the production steps
# ---------------------------------------------------------------------------


@dataclass
class _PanelArrays:
    frame: pd.DataFrame
    means: GeometricMeans
    lag: np.ndarray
    use: np.ndarray
    prev: np.ndarray
    years: list[int]
    year_dummies: np.ndarray
    plant: np.ndarray

    @classmethod
    def build(cls, panel: pd.DataFrame, means: GeometricMeans) -> "_PanelArrays":
        frame = sort_panel(panel) if not _is_sorted(panel) else panel.reset_index(drop=True)
        lag = lag_index(frame)
        use = np.flatnonzero(lag >= 0)
        if use.size == 0:
            raise EstimationError("no plant has two consecutive years of data")
        prev = lag[use]
        yrs = frame["year"].to_numpy()[use]
        years = sorted(set(int(y) for y in yrs))
        D = (yrs[:, None] == np.asarray(years)[None, :]).astype(float)
        return cls(frame=frame, means=means, lag=lag, use=use, prev=prev, years=years, year_dummies=D,
                   plant=frame["plant_id"].to_numpy()[use])

    def col(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy(dtype=float)

    def lag_of(self, values: np.ndarray) -> np.ndarray:
        """Values of the previous year for the usable rows."""
        return np.asarray(values, dtype=float)[self.prev]

    def now(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float)[self.use]


def _is_sorted(panel: pd.DataFrame) -> bool:
    keys = panel[["plant_id", "year"]]
    return bool(keys.equals(keys.sort_values(["plant_id", "year"], kind="mergesort")))


def _norm_logs(arr: _PanelArrays) -> dict[str, np.ndarray]:
    m = arr.means
    return {
        "K": np.log(arr.col("K") / m.K), "M": np.log(arr.col("M") / m.M), "H": np.log(arr.col("H") / m.H),
        "C": np.log(arr.col("C") / m.C), "D": np.log(arr.col("D") / m.D),
    }


def _extra_columns(arr: _PanelArrays, names: Sequence[str], lagged_values: bool) -> list[np.ndarray]:
    out = []
    for c in names:
        if c not in arr.frame:
            raise ConfigurationError(f"instrument column {c!r} not in panel")
        v = arr.col(c)
        out.append(arr.lag_of(v) if lagged_values else arr.now(v))
    return out


# ---------------------------------------------------------------------------
# Step 1: labor-augmenting productivity
# ---------------------------------------------------------------------------


@dataclass
class Step1Options:
    """Instrument menu and optimizer settings for the first step.

    The default instruments are the year dummies, the regulation index and
    import indicator, last year's normalized log white-collar, temporary,
    permanent and materials quantities, last year's log white-collar to
    materials expenditure ratio, current normalized log capital and the
    square of last year's log temporary-to-permanent ratio.

    ``extra`` names exogenous columns entered at current values; ``None``
    uses whichever of :data:`DEFAULT_SHIFTERS` the panel has.  When both
    columns of ``relative_supply`` are present, the difference ``r`` of the
    two observed blue-collar supply shifters enters as ``r``, ``r**2`` and
    ``r`` times last year's log temporary-to-permanent ratio; these carry
    the information on the blue-collar curvature.
    """

    extra: Sequence[str] | None = None
    extra_lagged: Sequence[str] = ()
    relative_supply: tuple[str, str] | None = ("supply_shift_C", "supply_shift_D")
    include_default: bool = True
    gmm: GmmOptions = field(default_factory=GmmOptions)
    bounds: Sequence[tuple[float, float]] = (SIGMA_BOUNDS, SIGMA_BOUNDS, SIGMA_BOUNDS)
    fixed: Mapping[str, float] = field(default_factory=dict)
    """Exponents held at given values (keys ``sigma_O``, ``sigma_M``, ``sigma_I``)."""


@dataclass
class Step1Result:
    sigma_O: float
    sigma_M: float
    sigma_I: float
    rho_L: float
    beta_L1: float
    beta_L2: float
    iota_L: dict[int, float]
    omega_L_hat: np.ndarray
    xi_L_hat: np.ndarray
    L_hat_norm: np.ndarray
    worker_shares: tuple[float, float, float, float]
    means: GeometricMeans
    gmm: GmmResult
    system: MomentSystem = field(repr=False)
    data: Any = field(repr=False)

    @property
    def sigmas(self) -> tuple[float, float, float]:
        return (self.sigma_O, self.sigma_M, self.sigma_I)


def _step1_instruments(arr: _PanelArrays, opts: Step1Options) -> tuple[np.ndarray, list[str]]:
    nl = _norm_logs(arr)
    cols: list[np.ndarray] = [arr.year_dummies[:, j] for j in range(len(arr.years))]
    names = [f"year_{y}" for y in arr.years]
    cols += [arr.now(arr.col("IDA")), arr.now(arr.col("Imp_lag"))]
    names += ["IDA", "Imp_lag"]
    if opts.include_default:
        exp_ratio = np.log(arr.col("W_H") * arr.col("H")) - np.log(arr.col("P_M") * arr.col("M"))
        cd = nl["C"] - nl["D"]
        cols += [arr.lag_of(nl["H"]), arr.lag_of(nl["C"]), arr.lag_of(nl["D"]), arr.lag_of(nl["M"]),
                 arr.lag_of(exp_ratio), arr.now(nl["K"]), arr.lag_of(cd) ** 2]
        names += ["lag_log_H", "lag_log_C", "lag_log_D", "lag_log_M", "lag_log_exp_ratio", "log_K",
                  "lag_log_CD_sq"]
        rel = opts.relative_supply
        if rel is not None and all(c in arr.frame for c in rel):
            r = arr.now(arr.col(rel[0]) - arr.col(rel[1]))
            cols += [r, r ** 2, r * arr.lag_of(cd)]
            names += ["rel_supply", "rel_supply_sq", "rel_supply_x_lag_log_CD"]
    extra = [c for c in DEFAULT_SHIFTERS if c in arr.frame] if opts.extra is None else list(opts.extra)
    cols += _extra_columns(arr, extra, False)
    names += extra
    cols += _extra_columns(arr, opts.extra_lagged, True)
    names += [f"lag_{c}" for c in opts.extra_lagged]
    return np.column_stack(cols), names


def step1_system(panel: pd.DataFrame, means: GeometricMeans, opts: Step1Options | None = None,
                 worker_shares=None) -> tuple[MomentSystem, Any]:
    """Build the first-step moment system and its data bundle."""
    opts = opts or Step1Options()
    arr = _PanelArrays.build(panel, means)
    ws = tuple(worker_shares) if worker_shares is not None else worker_shares_from_means(means)
    obs = {c: arr.col(c) for c in ("H", "M", "W_H", "P_M", "C", "D")}
    Z, znames = _step1_instruments(arr, opts)
    IDA = arr.now(arr.col("IDA"))
    Imp = arr.now(arr.col("Imp_lag"))
    linear_names = ["rho_L", "beta_L1", "beta_L2"] + [f"iota_L_{y}" for y in arr.years]

    unknown = set(opts.fixed) - set(SIGMA_NAMES)
    if unknown:
        raise ConfigurationError(f"cannot fix {sorted(unknown)}; choose from {SIGMA_NAMES}")
    free = [j for j, nm in enumerate(SIGMA_NAMES) if nm not in opts.fixed]
    template = np.array([opts.fixed.get(nm, np.nan) for nm in SIGMA_NAMES])

    def model(theta, data):
        sig = template.copy()
        sig[free] = theta
        omega = np.asarray(omega_L_characterization(obs, tuple(sig), ws, means), dtype=float)
        X = np.column_stack([arr.lag_of(omega), IDA, Imp, arr.year_dummies])
        return arr.now(omega), X

    system = MomentSystem(model=model, instruments=Z, names=[SIGMA_NAMES[j] for j in free],
                          bounds=[tuple(opts.bounds[j]) for j in free], linear_names=linear_names,
                          year_effects={y: 3 + i for i, y in enumerate(arr.years)},
                          clusters=lambda data: arr.plant)
    data = {"arrays": arr, "instrument_names": znames, "worker_shares": ws, "obs": obs}
    return system, data


def step1_estimate(panel: pd.DataFrame, means: GeometricMeans, opts: Step1Options | None = None,
                   worker_shares=None) -> Step1Result:
    """First step: CES exponents and the labor-augmenting productivity process.

    Returns estimates of ``sigma_O, sigma_M, sigma_I, rho_L, beta_L1,
    beta_L2`` and the year effects, together with the implied
    labor-augmenting productivity for every observation (aligned with the
    panel sorted by plant and year).
    """
    opts = opts or Step1Options()
    system, data = step1_system(panel, means, opts, worker_shares)
    res = gmm_estimate(system, data, opts=opts.gmm)
    arr: _PanelArrays = data["arrays"]
    sig = tuple(float(opts.fixed[nm]) if nm in opts.fixed else res[nm] for nm in SIGMA_NAMES)
    ws = data["worker_shares"]
    omega = np.asarray(omega_L_characterization(data["obs"], sig, ws, means), dtype=float)
    _, log_L = log_labor_aggregate(arr.col("H") / means.H, arr.col("C") / means.C, arr.col("D") / means.D,
                                   sig[1], sig[2], ws)
    xi = np.full(len(omega), np.nan)
    xi[arr.use] = res.residuals
    return Step1Result(sigma_O=sig[0], sigma_M=sig[1], sigma_I=sig[2], rho_L=res["rho_L"],
                       beta_L1=res["beta_L1"], beta_L2=res["beta_L2"],
                       iota_L={y: res[f"iota_L_{y}"] for y in arr.years}, omega_L_hat=omega, xi_L_hat=xi,
                       L_hat_norm=np.exp(log_L), worker_shares=ws, means=means, gmm=res, system=system,
                       data=data)


# ---------------------------------------------------------------------------
# Step 2: capital distortion and Hicks-neutral productivity process
# ---------------------------------------------------------------------------


@dataclass
class Step2Options:
    """Instrument menu and optimizer settings for the second step.

    Default instruments: year dummies, regulation index, import indicator,
    current and lagged normalized log capital, last year's normalized log
    materials and labor aggregate, last year's labor-augmenting productivity
    and last year's log output price.
    """

    extra: Sequence[str] = ()
    extra_lagged: Sequence[str] = ()
    include_default: bool = True
    gmm: GmmOptions = field(default_factory=GmmOptions)
    bounds: tuple[float, float] = TAU_BOUNDS


@dataclass
class Step2Result:
    tau: float
    rho_H: float
    beta_H1: float
    beta_H2: float
    iota_H: dict[int, float]
    omega_tilde: np.ndarray
    log_f_hat: np.ndarray
    chi_hat: np.ndarray
    params: ProductionParams
    gmm: GmmResult
    tau_at_bound: bool
    system: MomentSystem = field(repr=False)
    data: Any = field(repr=False)


def step2_system(panel: pd.DataFrame, step1: Step1Result, means: GeometricMeans | None = None,
                 opts: Step2Options | None = None) -> tuple[MomentSystem, Any]:
    """Build the second-step moment system and its data bundle."""
    opts = opts or Step2Options()
    means = means or step1.means
    arr = _PanelArrays.build(panel, means)
    nl = _norm_logs(arr)
    obs = {"K": arr.col("K"), "M": arr.col("M")}
    log_q = np.log(arr.col("Q_obs") / means.Q)
    omega_L = step1.omega_L_hat
    L_norm = step1.L_hat_norm
    sig = step1.sigmas

    cols = [arr.year_dummies[:, j] for j in range(len(arr.years))]
    znames = [f"year_{y}" for y in arr.years]
    cols += [arr.now(arr.col("IDA")), arr.now(arr.col("Imp_lag"))]
    znames += ["IDA", "Imp_lag"]
    if opts.include_default:
        cols += [arr.now(nl["K"]), arr.lag_of(nl["K"]), arr.lag_of(nl["M"]), arr.lag_of(np.log(L_norm)),
                 arr.lag_of(omega_L), arr.lag_of(np.log(arr.col("P")))]
        znames += ["log_K", "lag_log_K", "lag_log_M", "lag_log_L", "lag_omega_L", "lag_log_P"]
    cols += _extra_columns(arr, opts.extra, False)
    znames += list(opts.extra)
    cols += _extra_columns(arr, opts.extra_lagged, True)
    znames += [f"lag_{c}" for c in opts.extra_lagged]
    Z = np.column_stack(cols)
    IDA = arr.now(arr.col("IDA"))
    Imp = arr.now(arr.col("Imp_lag"))
    linear_names = ["rho_H", "beta_H1", "beta_H2"] + [f"iota_H_{y}" for y in arr.years]

    def model(theta, data):
        lf = np.asarray(log_f_tau(obs, float(theta[0]), sig, omega_L, L_norm, means), dtype=float)
        wt = log_q - lf
        X = np.column_stack([arr.lag_of(wt), IDA, Imp, arr.year_dummies])
        return arr.now(wt), X

    system = MomentSystem(model=model, instruments=Z, names=["tau"], bounds=[tuple(opts.bounds)],
                          linear_names=linear_names,
                          year_effects={y: 3 + i for i, y in enumerate(arr.years)},
                          clusters=lambda data: arr.plant)
    data = {"arrays": arr, "instrument_names": znames, "obs": obs, "log_q": log_q}
    return system, data


def step2_estimate(panel: pd.DataFrame, step1: Step1Result, means: GeometricMeans | None = None,
                   opts: Step2Options | None = None) -> Step2Result:
    """Second step: capital distortion ``tau`` and the Hicks-neutral process.

    The composite residual ``chi = xi_H + eps - rho_H * eps_lag`` is
    orthogonal to the instruments.  Also returns the composite productivity
    ``omega_tilde = log(Q_obs/Q_bar) - log f(tau_hat)`` for every
    observation, the input of the state-space step.
    """
    opts = opts or Step2Options()
    means = means or step1.means
    system, data = step2_system(panel, step1, means, opts)
    res = gmm_estimate(system, data, opts=opts.gmm)
    arr: _PanelArrays = data["arrays"]
    tau = float(res.theta[0])
    lf = np.asarray(log_f_tau(data["obs"], tau, step1.sigmas, step1.omega_L_hat, step1.L_hat_norm, means),
                    dtype=float)
    chi = np.full(len(lf), np.nan)
    chi[arr.use] = res.residuals
    params = ProductionParams.from_tau(step1.sigma_O, step1.sigma_M, step1.sigma_I, tau, means)
    return Step2Result(tau=tau, rho_H=res["rho_H"], beta_H1=res["beta_H1"], beta_H2=res["beta_H2"],
                       iota_H={y: res[f"iota_H_{y}"] for y in arr.years}, omega_tilde=data["log_q"] - lf,
                       log_f_hat=lf, chi_hat=chi, params=params, gmm=res, tau_at_bound="tau" in res.at_bound,
                       system=system, data=data)


# ---------------------------------------------------------------------------
# Step 3: Hicks-neutral productivity versus measurement error
# ---------------------------------------------------------------------------


@dataclass
class Step3Result:
    """State-space estimates aligned with the sorted panel."""

    sigma_H: float
    se_sigma_H: float
    loglik: float
    boundary: bool
    omega_H_hat: np.ndarray
    xi_H_hat: np.ndarray
    eps_hat: np.ndarray
    spec: Any = field(repr=False)


def step3_spec(step2: Step2Result):
    """State-space data built from the second-step composite productivity."""
    from .kalman import StateSpaceSpec

    arr: _PanelArrays = step2.data["arrays"]
    years = arr.frame["year"].to_numpy()
    iota = np.array([step2.iota_H.get(int(y), 0.0) for y in years])
    return StateSpaceSpec(omega_tilde=step2.omega_tilde, lag_idx=arr.lag, IDA=arr.col("IDA"),
                          Imp=arr.col("Imp_lag"), iota=iota, rho=step2.rho_H, beta1=step2.beta_H1,
                          beta2=step2.beta_H2)


def step3_estimate(step2: Step2Result, backend: str | None = None) -> Step3Result:
    """Third step: maximum-likelihood ``sigma_H`` and smoothed productivity.

    The measurement error has unit variance by normalization, so only the
    innovation standard deviation of Hicks-neutral productivity is estimated.
    """
    from .kalman import estimate_sigma_H, kalman_smooth

    spec = step3_spec(step2)
    sigma, se, ll, boundary = estimate_sigma_H(spec, backend=backend)
    sm = kalman_smooth(spec, sigma * sigma, backend=backend, se_sigma_H=se, boundary=boundary)
    return Step3Result(sigma_H=sigma, se_sigma_H=se, loglik=ll, boundary=boundary, omega_H_hat=sm.omega_H_hat,
                       xi_H_hat=sm.xi_hat, eps_hat=sm.eps_hat, spec=spec)
