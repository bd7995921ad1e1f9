"""Synthetic establishment panels that satisfy the estimating equations exactly.

The generator draws exogenous state (capital, materials, white-collar labor,
output prices, productivity, labor-market shifters) and then imposes plant
optimality:

* white-collar wages and materials prices are backed out from their
  first-order conditions, so the labor-augmenting productivity
  characterization holds exactly;
* temporary blue-collar wages solve the wage-posting condition
  ``MRP_C = W_C * nu_C + g_C`` with ``nu_C`` the nested-logit inverse supply
  elasticity evaluated at the realized shares;
* permanent wages solve the bargaining condition
  ``MRP_D = W_D + a_D * (1 + k * Pi / (D * W_D)) + g_D`` with
  ``k = (theta - 1) / theta``;
* employment of both blue-collar types is generated forward from nested-logit
  labor supply with amenity shocks.

Wages are found by damped best-response iteration: each plant solves its own
one-dimensional condition with rivals' wages frozen at the previous iterate.

True share parameters are configuration inputs.  The baseline wage and price
indices recorded in the truth are the ones implied by those shares, so an
estimator given the truth's :class:`~cesmarkdown.core.GeometricMeans`
reproduces the generating technology exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from .core import GeometricMeans, ProductionParams, ProductivityParams, ProductivityState
from .errors import ConfigurationError, GenerationError, ParameterError
from .laborsupply import LaborSupplyParams, TimeFactor

MAX_FIXED_POINT_ITER = 500
_WAGE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExogenousConfig:
    """Exogenous processes and instrument strengths.

    Log capital, materials and white-collar labor are plant effects plus
    stationary AR(1) deviations.  Materials and white-collar labor load on
    observed shifters ``z_M`` and ``z_H``; capital loads on last year's
    Hicks-neutral productivity.
    """

    rho_x: float = 0.6
    sd_fe: float = 0.3
    sd_fe_K: float = 0.3
    sd_innov_K: float = 0.5
    sd_innov: float = 0.2
    log_K0: float = 12.0
    log_M0: float = 11.0
    log_H0: float = 8.0
    rho_z: float = 0.5
    z_loading_M: float = 0.4
    z_loading_H: float = 0.4
    capital_feedback: float = 0.1
    price_productivity_loading: float = 1.0
    sd_fe_P: float = 0.1
    sd_P: float = 0.05
    rho_P: float = 0.5
    amenity_fe_sd: float = 0.15
    amenity_sd: float = 0.15
    supply_shift: float = 0.8
    log_pool_C: float = 13.4
    log_pool_D: float = 13.4
    pool_sd_market: float = 0.15
    pool_sd_time: float = 0.1
    IDA_mean: float = 1.0
    IDA_sd_market: float = 0.5
    IDA_trend: float = 0.05
    IDA_sd: float = 0.1
    imp_persistence: float = 0.8
    imp_rate: float = 0.3
    log_strike_mean: float = -3.0
    log_strike_sd: float = 0.7
    min_plants_per_market: int = 2


def _default_labor_C() -> LaborSupplyParams:
    return LaborSupplyParams(gamma=0.009, gamma_t=-0.0002, eta=0.245, intercept=-6.0, trend=0.0,
                             worker_type="C")


def _default_labor_D() -> LaborSupplyParams:
    return LaborSupplyParams(gamma=0.005, gamma_t=-0.0001, eta=0.402, intercept=-5.5, trend=0.0,
                             worker_type="D")


@dataclass(frozen=True)
class DgpConfig:
    """Complete description of a synthetic panel.

    Shares are given at the top level (``alpha_M``), within labor
    (``alpha_H``) and within blue-collar labor (``alpha_C``); the remaining
    shares follow from ``tau`` and adding-up.
    """

    sigma_O: float = 0.501
    sigma_M: float = 0.773
    sigma_I: float = 0.222
    tau: float = 0.376
    alpha_M: float = 0.680
    alpha_H: float = 0.449
    alpha_C: float = 0.307
    Q_bar: float = 3.5e8
    productivity: ProductivityParams = field(default_factory=ProductivityParams)
    labor_C: LaborSupplyParams = field(default_factory=_default_labor_C)
    labor_D: LaborSupplyParams = field(default_factory=_default_labor_D)
    conduct: str = "nash_bargaining"
    theta: float = 0.939
    markup: float = 1.2
    demand_elasticity: float | None = None
    g_C: float = 0.0
    g_D: float = 0.0
    n_plants: int = 200
    n_years: int = 15
    n_markets: int = 10
    first_year: int = 2001
    exog: ExogenousConfig = field(default_factory=ExogenousConfig)
    measurement_error: bool = True
    omega_init_sd_H: float | None = None
    omega_init_sd_L: float | None = None
    seed: int = 0
    max_redraws: int = 10

    def __post_init__(self) -> None:
        if self.conduct not in ("nash_bertrand", "nash_bargaining"):
            raise ConfigurationError(f"unknown conduct {self.conduct!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ParameterError("theta must lie in (0, 1]")
        if self.demand_elasticity is not None and not self.demand_elasticity > 1.0:
            raise ParameterError("demand elasticity must exceed one")
        if not self.effective_markup > 1.0:
            raise ParameterError("markup must exceed one")
        if self.g_C < 0 or self.g_D < 0:
            raise ParameterError("coordination-cost slopes must be non-negative")
        if self.n_years < 3:
            raise ConfigurationError("n_years must be at least 3")
        if self.n_plants < self.n_markets * self.exog.min_plants_per_market:
            raise ConfigurationError("too few plants for the requested number of markets")
        if not 1.0 - self.alpha_M * (1.0 + self.tau) > 0:
            raise ParameterError("alpha_M * (1 + tau) must be below one")
        for name in ("alpha_M", "alpha_H", "alpha_C"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1)")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        prod = self.productivity
        years = self.years
        filled_H = {y: prod.iota_H_t.get(y, 0.0) for y in years}
        filled_L = {y: prod.iota_L_t.get(y, 0.0) for y in years}
        if filled_H != prod.iota_H_t or filled_L != prod.iota_L_t:
            object.__setattr__(self, "productivity", replace(prod, iota_H_t=filled_H, iota_L_t=filled_L))

    @property
    def years(self) -> list[int]:
        return list(range(self.first_year, self.first_year + self.n_years))

    @property
    def effective_markup(self) -> float:
        if self.demand_elasticity is not None:
            e = self.demand_elasticity
            return e / (e - 1.0)
        return self.markup

    @property
    def bargaining_k(self) -> float:
        """``(theta - 1) / theta`` under bargaining, zero under wage posting."""
        if self.conduct == "nash_bertrand":
            return 0.0
        return (self.theta - 1.0) / self.theta

    @property
    def shares(self) -> dict[str, float]:
        a_K = self.tau * self.alpha_M
        return {"alpha_K": a_K, "alpha_M": self.alpha_M, "alpha_L": 1.0 - self.alpha_M - a_K,
                "alpha_H": self.alpha_H, "alpha_B": 1.0 - self.alpha_H,
                "alpha_C": self.alpha_C, "alpha_D": 1.0 - self.alpha_C}

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "to_dict"):
                out[f.name] = v.to_dict()
            elif isinstance(v, ExogenousConfig):
                out[f.name] = asdict(v)
            else:
                out[f.name] = v
        out["exog"] = asdict(self.exog)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DgpConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown DGP configuration keys: {sorted(unknown)}")
        if "productivity" in data:
            data["productivity"] = ProductivityParams.from_dict(data["productivity"])
        for key in ("labor_C", "labor_D"):
            if key in data:
                data[key] = LaborSupplyParams.from_dict(data[key])
        if "exog" in data:
            data["exog"] = ExogenousConfig(**data["exog"])
        return cls(**data)


# ---------------------------------------------------------------------------
# Technology
# ---------------------------------------------------------------------------


class _Technology:
    """Per-observation evaluation of output and marginal revenue products."""

    def __init__(self, cfg: DgpConfig, K, M, H, omega_L, omega_H, P, mu, K_bar, M_bar, H_bar):
        self.cfg = cfg
        sh = cfg.shares
        self.la = {k: np.log(v) for k, v in sh.items()}
        sO, sM = cfg.sigma_O, cfg.sigma_M
        self.tK = self.la["alpha_K"] + sO * np.log(K / K_bar)
        self.tM = self.la["alpha_M"] + sO * np.log(M / M_bar)
        self.tH = self.la["alpha_H"] + sM * np.log(H / H_bar)
        self.tKM = np.logaddexp(self.tK, self.tM)
        self.K, self.M, self.H = K, M, H
        self.omega_L, self.omega_H = omega_L, omega_H
        self.P, self.mu = P, mu
        self.C_bar = 1.0
        self.D_bar = 1.0

    def evaluate(self, C, D, idx=None) -> dict[str, np.ndarray]:
        cfg = self.cfg
        sO, sM, sI = cfg.sigma_O, cfg.sigma_M, cfg.sigma_I
        sel = (lambda a: a) if idx is None else (lambda a: a[idx])
        tC = self.la["alpha_C"] + sI * np.log(C / self.C_bar)
        tD = self.la["alpha_D"] + sI * np.log(D / self.D_bar)
        lBs = np.logaddexp(tC, tD)
        log_B = lBs / sI
        tB = self.la["alpha_B"] + sM * log_B
        tH = sel(self.tH)
        lLs = np.logaddexp(tH, tB)
        log_L = lLs / sM
        tL = self.la["alpha_L"] + sO * (sel(self.omega_L) + log_L)
        lS = np.logaddexp(sel(self.tKM), tL)
        Q = np.exp(np.log(cfg.Q_bar) + lS / sO + sel(self.omega_H))
        s_L = np.exp(tL - lS)
        s_M = np.exp(sel(self.tM) - lS)
        s_B = np.exp(tB - lLs)
        s_H = np.exp(tH - lLs)
        s_C = np.exp(tC - lBs)
        s_D = np.exp(tD - lBs)
        rev = sel(self.P) / sel(self.mu) * Q
        return {
            "Q": Q, "log_B": log_B, "log_L": log_L, "log_S": lS,
            "MRP_C": rev * s_L * s_B * s_C / C,
            "MRP_D": rev * s_L * s_B * s_D / D,
            "MRP_H": rev * s_L * s_H / sel(self.H),
            "MRP_M": rev * s_M / sel(self.M),
            "Pi": (sel(self.P) - sel(self.P) / sel(self.mu)) * Q,
        }


# ---------------------------------------------------------------------------
# Nested logit and the wage solver
# ---------------------------------------------------------------------------


def _group_sum(values: np.ndarray, group: np.ndarray, n_groups: int) -> np.ndarray:
    return np.bincount(group, weights=values, minlength=n_groups)


def nested_logit_shares(log_e: np.ndarray, log_E_minus: np.ndarray, eta: float):
    """Shares of a plant with own inclusive term ``e = exp(delta/(1-eta))``.

    ``log_E_minus`` is the log of the rivals' inclusive terms in the same
    market (``-inf`` without rivals).  Returns ``(s_j, s_0, s_{j|r})``.
    """
    log_Dr = np.logaddexp(log_E_minus, log_e)
    s_cond = np.exp(log_e - log_Dr)
    x = (1.0 - eta) * log_Dr
    log_den = np.logaddexp(0.0, x)
    s_jr = s_cond * np.exp(x - log_den)
    s_0 = np.exp(-log_den)
    return s_jr, s_0, s_cond


def _solve_increasing(fun: Callable[[np.ndarray, np.ndarray], np.ndarray], lo: np.ndarray,
                      hi: np.ndarray, labels: Callable[[int], str], tol: float = 1e-14,
                      maxiter: int = 300, corner: bool | list = False) -> np.ndarray:
    """Vectorized Illinois false-position solve of increasing residuals.

    ``fun(x, idx)`` evaluates the residual for elements ``idx`` at ``x``.
    With ``corner`` set, elements without a sign change inside the expanded
    bracket return the bracket end nearest to a root instead of raising; if
    ``corner`` is a list the boolean mask of such elements is appended to it.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _illinois(fun, lo, hi, labels, tol, maxiter, corner)


def _illinois(fun, lo, hi, labels, tol, maxiter, corner=False):
    corners = corner if isinstance(corner, list) else []
    corner = corner is not False
    n = len(lo)
    all_idx = np.arange(n)
    lo = lo.copy()
    hi = hi.copy()
    flo = fun(lo, all_idx)
    fhi = fun(hi, all_idx)
    for _ in range(30):
        bad_lo = ~(flo < 0)
        bad_hi = ~(fhi > 0)
        if not (bad_lo.any() or bad_hi.any()):
            break
        if bad_lo.any():
            lo[bad_lo] -= 3.0
            flo[bad_lo] = fun(lo[bad_lo], all_idx[bad_lo])
        if bad_hi.any():
            hi[bad_hi] += 3.0
            fhi[bad_hi] = fun(hi[bad_hi], all_idx[bad_hi])
    bad = ~((flo < 0) & (fhi > 0))
    x = 0.5 * (lo + hi)
    if bad.any():
        if not corner:
            raise GenerationError(f"no wage solves the first-order condition for {labels(int(np.flatnonzero(bad)[0]))}")
        x[bad] = np.where(flo[bad] >= 0, lo[bad], hi[bad])
    if corner:
        corners.append(bad)
    side = np.zeros(n, dtype=np.int8)
    active = all_idx[~bad]
    if active.size == 0:
        return x
    for _ in range(maxiter):
        a = active
        xa = (lo[a] * fhi[a] - hi[a] * flo[a]) / (fhi[a] - flo[a])
        mid = 0.5 * (lo[a] + hi[a])
        outside = ~((xa > lo[a]) & (xa < hi[a]))
        xa = np.where(outside, mid, xa)
        fx = fun(xa, a)
        x[a] = xa
        pos = fx > 0
        # Illinois modification: halve the stale endpoint's residual
        stale_lo = pos & (side[a] == 1)
        stale_hi = ~pos & (side[a] == -1)
        hi[a] = np.where(pos, xa, hi[a])
        fhi[a] = np.where(pos, fx, fhi[a])
        lo[a] = np.where(pos, lo[a], xa)
        flo[a] = np.where(pos, flo[a], fx)
        flo[a] = np.where(stale_lo, 0.5 * flo[a], flo[a])
        fhi[a] = np.where(stale_hi, 0.5 * fhi[a], fhi[a])
        side[a] = np.where(pos, 1, -1)
        done = (np.abs(fx) <= tol) | (hi[a] - lo[a] <= tol * np.maximum(1.0, np.abs(xa)))
        active = a[~done]
        if active.size == 0:
            return x
    raise GenerationError(f"wage solve did not converge for {labels(int(active[0]))}")


class _NoEquilibrium(GenerationError):
    """A plant's wage best response stays at a corner: no interior equilibrium."""


_MAX_CORNER_STREAK = 25


@dataclass
class _LaborSide:
    """Per-observation labor-supply inputs for one worker type."""

    base: np.ndarray      # intercept + trend*t + amenity
    gamma_t: np.ndarray
    eta: float
    log_pool: np.ndarray
    group: np.ndarray
    n_groups: int

    def log_e(self, W: np.ndarray, idx=None) -> np.ndarray:
        if idx is None:
            return (self.base + self.gamma_t * W) / (1.0 - self.eta)
        return (self.base[idx] + self.gamma_t[idx] * W) / (1.0 - self.eta)

    def log_E_minus(self, W: np.ndarray) -> np.ndarray:
        le = self.log_e(W)
        shift = np.full(self.n_groups, -np.inf)
        np.maximum.at(shift, self.group, le)
        e = np.exp(le - shift[self.group])
        tot = _group_sum(e, self.group, self.n_groups)[self.group]
        rest = np.maximum(tot - e, 0.0)
        with np.errstate(divide="ignore"):
            return np.log(rest) + shift[self.group]

    def quantities(self, W: np.ndarray, log_E_minus: np.ndarray, idx=None):
        le = self.log_e(W, idx)
        lem = log_E_minus if idx is None else log_E_minus[idx]
        s_jr, s_0, s_cond = nested_logit_shares(le, lem, self.eta)
        pool = np.exp(self.log_pool if idx is None else self.log_pool[idx])
        gt = self.gamma_t if idx is None else self.gamma_t[idx]
        # an own share of one (a transient extreme wage) gives an infinite slope, i.e. a corner
        with np.errstate(divide="ignore"):
            a = (1.0 - self.eta) / (gt * (1.0 - self.eta * s_cond - (1.0 - self.eta) * s_jr))
        return pool * s_jr, s_jr, s_0, s_cond, a


def _damped_fixed_point(best_response: Callable[[np.ndarray], np.ndarray], x0: np.ndarray,
                        labels: Callable[[int], str]) -> np.ndarray:
    """Fixed point of the damped best-response map ``x -> (x + BR(x)) / 2``.

    The damped map converges linearly and slowly when rivals' wages are
    strong strategic complements, so its iterates are extrapolated with the
    squared polynomial scheme of Varadhan and Roland (SQUAREM).  The returned
    point satisfies ``max|BR(x) - x| < _WAGE_TOL``; at most
    ``MAX_FIXED_POINT_ITER`` best responses are evaluated.
    """
    evals = 0

    def damped(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nonlocal evals
        evals += 1
        br = best_response(x)
        return 0.5 * x + 0.5 * br, np.abs(br - x)

    dev = np.full(len(x0), np.inf)
    while evals < MAX_FIXED_POINT_ITER - 2:
        x1, dev = damped(x0)
        if dev.max() < _WAGE_TOL:
            return x0
        x2, dev2 = damped(x1)
        if dev2.max() < _WAGE_TOL:
            return x1
        r = x1 - x0
        v = x2 - x1 - r
        nv = float(np.sqrt(v @ v))
        alpha = -float(np.sqrt(r @ r)) / nv if nv > 0 else -1.0
        alpha = min(alpha, -1.0)
        x_acc = x0 - 2.0 * alpha * r + alpha * alpha * v
        try:
            x0, _ = damped(x_acc)
            if not np.all(np.isfinite(x0)):
                raise GenerationError("non-finite extrapolated wages")
        except _NoEquilibrium:
            raise
        except GenerationError:
            x0 = x2
    worst = int(np.argmax(dev))
    raise GenerationError(f"wage fixed point did not converge within {MAX_FIXED_POINT_ITER} iterations; "
                          f"largest change at {labels(worst)}")


def _jacobi_wages(cfg: DgpConfig, tech: _Technology, side_C: _LaborSide, side_D: _LaborSide,
                  W_C: np.ndarray, W_D: np.ndarray, labels: Callable[[int], str]):
    """Damped best-response iteration with the technology baseline held fixed.

    Returns the equilibrium wages of both blue-collar types.
    """
    k = cfg.bargaining_k
    n = len(W_C)

    def best_response(x: np.ndarray) -> np.ndarray:
        wc = np.exp(x[:n])
        wd = np.exp(x[n:])
        lem_C = side_C.log_E_minus(wc)
        lem_D = side_D.log_E_minus(wd)
        C = side_C.quantities(wc, lem_C)[0]
        D = side_D.quantities(wd, lem_D)[0]

        def res_C(z, idx):
            W = np.exp(z)
            Cq, _, _, _, a = side_C.quantities(W, lem_C, idx)
            mrp = tech.evaluate(Cq, D[idx], idx)["MRP_C"]
            return (W + a + cfg.g_C) / mrp - 1.0

        def res_D(z, idx):
            W = np.exp(z)
            Dq, _, _, _, a = side_D.quantities(W, lem_D, idx)
            ev = tech.evaluate(C[idx], Dq, idx)
            return (W + a * (1.0 + k * ev["Pi"] / (Dq * W)) + cfg.g_D) / ev["MRP_D"] - 1.0

        # away from equilibrium a rival quantity can be extreme enough that no
        # interior wage exists; the corner keeps the iteration going and the
        # fixed point is checked below
        found: list[np.ndarray] = []
        br_C = _solve_increasing(res_C, x[:n] - 1.0, x[:n] + 1.0, labels, corner=found)
        br_D = _solve_increasing(res_D, x[n:] - 1.0, x[n:] + 1.0, labels, corner=found)
        at_corner = np.concatenate(found)
        stuck[:] = np.where(at_corner, stuck + 1, 0)
        if stuck.max() >= _MAX_CORNER_STREAK:
            raise _NoEquilibrium(f"no wage solves the first-order condition for {labels(int(np.argmax(stuck)) % n)}")
        return np.concatenate([br_C, br_D])

    stuck = np.zeros(2 * n, dtype=np.int64)

    x0 = np.concatenate([np.log(W_C), np.log(W_D)])
    x = _damped_fixed_point(best_response, x0, lambda i: labels(i % n))
    W_C, W_D = np.exp(x[:n]), np.exp(x[n:])
    C = side_C.quantities(W_C, side_C.log_E_minus(W_C))[0]
    D_side = side_D.quantities(W_D, side_D.log_E_minus(W_D))
    ev = tech.evaluate(C, D_side[0])
    a_C = side_C.quantities(W_C, side_C.log_E_minus(W_C))[4]
    a_D = D_side[4]
    with np.errstate(all="ignore"):
        gap_C = np.abs((W_C + a_C + cfg.g_C) / ev["MRP_C"] - 1.0)
        gap_D = np.abs((W_D + a_D * (1.0 + k * ev["Pi"] / (D_side[0] * W_D)) + cfg.g_D) / ev["MRP_D"] - 1.0)
    gap = np.maximum(np.nan_to_num(gap_C, nan=np.inf), np.nan_to_num(gap_D, nan=np.inf))
    if gap.max() > 1e-8:
        raise GenerationError(f"no wage solves the first-order condition for {labels(int(np.argmax(gap)))}")
    return W_C, W_D


def _equilibrium_wages(cfg: DgpConfig, tech: _Technology, side_C: _LaborSide, side_D: _LaborSide,
                       labels: Callable[[int], str], W_C0: float = 150.0, W_D0: float = 300.0):
    """Equilibrium wages with the blue-collar baseline re-centred once.

    The first pass centres the technology on employment at flat starting
    wages; the second pass re-centres it on first-pass employment.  The
    baseline actually used is stored on ``tech`` and ends up in the truth.
    """
    n = len(side_C.base)
    W_C = np.full(n, W_C0)
    W_D = np.full(n, W_D0)
    for _ in range(2):
        C = side_C.quantities(W_C, side_C.log_E_minus(W_C))[0]
        D = side_D.quantities(W_D, side_D.log_E_minus(W_D))[0]
        tech.C_bar = float(np.exp(np.mean(np.log(C))))
        tech.D_bar = float(np.exp(np.mean(np.log(D))))
        W_C, W_D = _jacobi_wages(cfg, tech, side_C, side_D, W_C, W_D, labels)
    return W_C, W_D


# ---------------------------------------------------------------------------
# Exogenous draws
# ---------------------------------------------------------------------------


def _market_sizes(cfg: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    base = cfg.exog.min_plants_per_market
    extra = cfg.n_plants - base * cfg.n_markets
    weights = rng.dirichlet(np.full(cfg.n_markets, 2.0))
    return base + rng.multinomial(extra, weights)


def _ar1(innov: np.ndarray, rho: float, init: np.ndarray | None = None) -> np.ndarray:
    out = np.empty_like(innov)
    prev = np.zeros(innov.shape[1]) if init is None else init
    for t in range(innov.shape[0]):
        prev = rho * prev + innov[t]
        out[t] = prev
    return out


def _draw_market(cfg: DgpConfig, n_r: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """All exogenous draws for one market, arrays shaped (years, plants)."""
    ex = cfg.exog
    prod = cfg.productivity
    T = cfg.n_years
    years = cfg.years
    d: dict[str, np.ndarray] = {}
    fe = rng.standard_normal((4, n_r))
    z_innov = rng.standard_normal((2, T, n_r)) * np.sqrt(1.0 - ex.rho_z ** 2)
    z_init = rng.standard_normal((2, n_r))
    u = rng.standard_normal((4, T, n_r))
    xi_L = rng.standard_normal((T, n_r)) * prod.sigma_L
    xi_H = rng.standard_normal((T, n_r)) * prod.sigma_H
    eps = rng.standard_normal((T, n_r)) * (1.0 if cfg.measurement_error else 0.0)
    pre = rng.standard_normal((2, n_r))
    imp0 = rng.random(n_r)
    imp_u = rng.random((2, T, n_r))
    amen_fe = rng.standard_normal((2, n_r))
    amen = rng.standard_normal((2, T, n_r))
    mkt = rng.standard_normal(5)
    mkt_t = rng.standard_normal((4, T))
    shift = rng.uniform(-1.0, 1.0, size=(2, T, n_r))

    # market-year variables
    t_idx = np.arange(T)
    IDA = ex.IDA_mean + ex.IDA_sd_market * mkt[0] + ex.IDA_trend * t_idx + ex.IDA_sd * mkt_t[0]
    log_pool_C = ex.log_pool_C + ex.pool_sd_market * mkt[1] + ex.pool_sd_time * mkt_t[1]
    log_pool_D = ex.log_pool_D + ex.pool_sd_market * mkt[2] + ex.pool_sd_time * mkt_t[2]
    strike = np.exp(ex.log_strike_mean + ex.log_strike_sd * mkt_t[3])

    imp = np.empty((T, n_r), dtype=np.int64)
    prev = (imp0 < ex.imp_rate).astype(np.int64)
    for t in range(T):
        keep = imp_u[0, t] < ex.imp_persistence
        prev = np.where(keep, prev, (imp_u[1, t] < ex.imp_rate).astype(np.int64))
        imp[t] = prev

    def init_sd(explicit, sigma, rho):
        if explicit is not None:
            return explicit
        return sigma / np.sqrt(1.0 - rho ** 2) if sigma > 0 else 0.5

    sd_L = init_sd(cfg.omega_init_sd_L, prod.sigma_L, prod.rho_L)
    sd_H = init_sd(cfg.omega_init_sd_H, prod.sigma_H, prod.rho_H)
    omega_L = np.empty((T, n_r))
    omega_H = np.empty((T, n_r))
    pre_L = sd_L * pre[0]
    pre_H = sd_H * pre[1]
    wl, wh = pre_L, pre_H
    for t, year in enumerate(years):
        wl = prod.iota_L_t[year] + prod.rho_L * wl + prod.beta_L1 * IDA[t] + prod.beta_L2 * imp[t] + xi_L[t]
        wh = prod.iota_H_t[year] + prod.rho_H * wh + prod.beta_H1 * IDA[t] + prod.beta_H2 * imp[t] + xi_H[t]
        omega_L[t] = wl
        omega_H[t] = wh

    z_M = _ar1(z_innov[0], ex.rho_z, z_init[0])
    z_H = _ar1(z_innov[1], ex.rho_z, z_init[1])
    # capital responds to last year's Hicks-neutral productivity
    lagged_H = np.vstack([pre_H[None, :], omega_H[:-1]])
    xk = _ar1(ex.sd_innov_K * u[0] + ex.capital_feedback * lagged_H, ex.rho_x)
    xm = _ar1(ex.sd_innov * u[1] + ex.z_loading_M * z_M, ex.rho_x)
    xh = _ar1(ex.sd_innov * u[2] + ex.z_loading_H * z_H, ex.rho_x)
    xp = _ar1(ex.sd_P * u[3], ex.rho_P)
    d["K"] = np.exp(ex.log_K0 + ex.sd_fe_K * fe[0] + xk)
    d["M"] = np.exp(ex.log_M0 + ex.sd_fe * fe[1] + xm)
    d["H"] = np.exp(ex.log_H0 + ex.sd_fe * fe[2] + xh)
    # physically more productive plants sell at lower prices, which keeps
    # revenue productivity and hence equilibrium wages in a plausible band
    d["P"] = np.exp(ex.sd_fe_P * fe[3] + xp - ex.price_productivity_loading * omega_H)
    d["z_M"], d["z_H"] = z_M, z_H
    d["omega_L"], d["omega_H"] = omega_L, omega_H
    d["omega_L_pre"] = np.broadcast_to(pre_L, (T, n_r)).copy()
    d["omega_H_pre"] = np.broadcast_to(pre_H, (T, n_r)).copy()
    d["xi_L"], d["xi_H"], d["eps"] = xi_L, xi_H, eps
    d["Imp_lag"] = imp
    d["supply_shift_C"] = ex.supply_shift * shift[0]
    d["supply_shift_D"] = ex.supply_shift * shift[1]
    d["amenity_C"] = ex.amenity_fe_sd * amen_fe[0] + ex.amenity_sd * amen[0] + d["supply_shift_C"]
    d["amenity_D"] = ex.amenity_fe_sd * amen_fe[1] + ex.amenity_sd * amen[1] + d["supply_shift_D"]
    d["IDA"] = np.broadcast_to(IDA[:, None], (T, n_r)).copy()
    d["log_pool_C"] = np.broadcast_to(log_pool_C[:, None], (T, n_r)).copy()
    d["log_pool_D"] = np.broadcast_to(log_pool_D[:, None], (T, n_r)).copy()
    d["strike_intensity"] = np.broadcast_to(strike[:, None], (T, n_r)).copy()
    return d


# ---------------------------------------------------------------------------
# Truth record
# ---------------------------------------------------------------------------


@dataclass
class Truth:
    """True parameters, generating baseline and latent per-observation states."""

    config: DgpConfig
    params: ProductionParams
    means: GeometricMeans
    states: pd.DataFrame
    redraws: int = 0

    @property
    def productivity(self) -> ProductivityParams:
        return self.config.productivity

    def to_json(self) -> str:
        payload = {
            "config": self.config.to_dict(),
            "params": self.params.to_dict(),
            "means": self.means.to_dict(),
            "states": {c: self.states[c].tolist() for c in self.states.columns},
            "redraws": self.redraws,
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Truth":
        payload = json.loads(text)
        config = DgpConfig.from_dict(payload["config"])
        means = GeometricMeans.from_dict(payload["means"])
        pdict = {k: v for k, v in payload["params"].items() if k != "means"}
        params = ProductionParams(**pdict, means=means)
        states = pd.DataFrame(payload["states"])
        return cls(config=config, params=params, means=means, states=states,
                   redraws=int(payload.get("redraws", 0)))


@dataclass
class SimulatedPanel:
    """Output of :func:`simulate_panel`.

    ``frame`` is the observable panel (one row per plant-year, sorted),
    ``state`` the latent productivity and ``truth`` the full ground truth.
    """

    frame: pd.DataFrame
    state: ProductivityState
    truth: Truth

    def observations(self):
        from .panel import observations_from_frame
        return observations_from_frame(self.frame)

    def __iter__(self):
        yield self.frame
        yield self.state
        yield self.truth


# ---------------------------------------------------------------------------
# Panel simulation
# ---------------------------------------------------------------------------


def simulate_panel(config: DgpConfig) -> SimulatedPanel:
    """Generate a panel satisfying every first-order condition of the model.

    Parameters
    ----------
    config : DgpConfig

    Some draws of the exogenous variables leave a plant without any positive
    wage that satisfies its first-order condition.  The whole panel is then
    redrawn from a seed derived deterministically from ``config.seed`` and the
    attempt number, at most ``config.max_redraws`` times; the number of
    redraws is stored on the truth.

    Returns
    -------
    SimulatedPanel
        Unpacks as ``(frame, state, truth)``.
    """
    last: GenerationError | None = None
    for attempt in range(config.max_redraws + 1):
        entropy = config.seed if attempt == 0 else [config.seed, attempt]
        try:
            sim = _simulate_once(config, np.random.SeedSequence(entropy))
        except _NoEquilibrium as exc:
            last = exc
            continue
        sim.truth.redraws = attempt
        return sim
    raise GenerationError(f"no equilibrium after {config.max_redraws + 1} draws; last: {last}")


def _simulate_once(cfg: DgpConfig, root: np.random.SeedSequence) -> SimulatedPanel:
    children = root.spawn(cfg.n_markets + 1)
    sizes = _market_sizes(cfg, np.random.default_rng(children[0]))
    T = cfg.n_years
    years = np.array(cfg.years)

    blocks: list[dict[str, np.ndarray]] = []
    next_id = 1
    for r in range(cfg.n_markets):
        n_r = int(sizes[r])
        d = _draw_market(cfg, n_r, np.random.default_rng(children[r + 1]))
        flat = {k: v.T.reshape(-1) for k, v in d.items()}  # plant-major
        flat["plant_id"] = np.repeat(np.arange(next_id, next_id + n_r), T)
        flat["market_id"] = np.full(n_r * T, r + 1)
        flat["year"] = np.tile(years, n_r)
        flat["t"] = np.tile(np.arange(T), n_r)
        flat["n_plants"] = np.full(n_r * T, float(n_r))
        next_id += n_r
        blocks.append(flat)
    data = {k: np.concatenate([b[k] for b in blocks]) for k in blocks[0]}
    n = len(data["year"])
    group = ((data["market_id"] - 1) * T + data["t"]).astype(np.int64)
    n_groups = cfg.n_markets * T

    mu = np.full(n, cfg.effective_markup)
    K_bar = float(np.exp(np.mean(np.log(data["K"]))))
    M_bar = float(np.exp(np.mean(np.log(data["M"]))))
    H_bar = float(np.exp(np.mean(np.log(data["H"]))))
    tech = _Technology(cfg, data["K"], data["M"], data["H"], data["omega_L"], data["omega_H"],
                       data["P"], mu, K_bar, M_bar, H_bar)

    def side(params: LaborSupplyParams, amen: np.ndarray, log_pool: np.ndarray) -> _LaborSide:
        base = params.intercept + params.trend * data["t"] + amen
        gt = np.asarray(params.gamma_at(data["year"]), dtype=float)
        if np.any(gt <= 0):
            raise ConfigurationError(f"wage coefficient of type {params.worker_type} is not positive in every year")
        if not params.eta_admissible:
            raise ConfigurationError(f"eta of type {params.worker_type} must lie in (0, 1)")
        return _LaborSide(base=base, gamma_t=gt, eta=params.eta, log_pool=log_pool, group=group,
                          n_groups=n_groups)

    side_C = side(cfg.labor_C, data["amenity_C"], data["log_pool_C"])
    side_D = side(cfg.labor_D, data["amenity_D"], data["log_pool_D"])

    def labels(i: int) -> str:
        return f"plant_id={int(data['plant_id'][i])}, year={int(data['year'][i])}"

    W_C, W_D = _equilibrium_wages(cfg, tech, side_C, side_D, labels)

    lem_C = side_C.log_E_minus(W_C)
    lem_D = side_D.log_E_minus(W_D)
    C, sjr_C, s0_C, sc_C, a_C = side_C.quantities(W_C, lem_C)
    D, sjr_D, s0_D, sc_D, a_D = side_D.quantities(W_D, lem_D)
    if np.any(sjr_C <= 0) or np.any(s0_C <= 0) or np.any(sjr_D <= 0) or np.any(s0_D <= 0):
        raise GenerationError("generated shares left the unit interval")
    ev = tech.evaluate(C, D)
    Q = ev["Q"]
    W_H = ev["MRP_H"]
    P_M = ev["MRP_M"]
    eps = data["eps"]
    Q_obs = Q * np.exp(eps)
    pool_C = np.exp(data["log_pool_C"])
    pool_D = np.exp(data["log_pool_D"])

    # baseline consistent with the configured shares
    sh = cfg.shares
    C_bar, D_bar = tech.C_bar, tech.D_bar
    P_M_bar = float(np.exp(np.mean(np.log(P_M))))
    e_M = P_M_bar * M_bar
    e_L = e_M * sh["alpha_L"] / sh["alpha_M"]
    e_H = sh["alpha_H"] * e_L
    e_B = e_L - e_H
    e_C = sh["alpha_C"] * e_B
    e_D = e_B - e_C
    means = GeometricMeans.from_levels(Q=cfg.Q_bar, K=K_bar, M=M_bar, H=H_bar, C=C_bar, D=D_bar,
                                       W_H=e_H / H_bar, W_C=e_C / C_bar, W_D=e_D / D_bar, P_M=P_M_bar)
    params = ProductionParams(sigma_O=cfg.sigma_O, sigma_M=cfg.sigma_M, sigma_I=cfg.sigma_I, tau=cfg.tau,
                              means=means, **sh)

    # rival shifters for labor-supply instruments
    zsum = _group_sum(data["z_M"], group, n_groups)[group]
    cnt = _group_sum(np.ones(n), group, n_groups)[group]
    z_rival = np.where(cnt > 1, (zsum - data["z_M"]) / np.maximum(cnt - 1, 1), 0.0)

    frame = pd.DataFrame({
        "plant_id": data["plant_id"].astype(np.int64),
        "year": data["year"].astype(np.int64),
        "market_id": data["market_id"].astype(np.int64),
        "Q_obs": Q_obs, "P": data["P"], "K": data["K"], "M": data["M"], "P_M": P_M,
        "H": data["H"], "W_H": W_H, "C": C, "W_C": W_C, "D": D, "W_D": W_D,
        "IDA": data["IDA"], "Imp_lag": data["Imp_lag"].astype(np.int64),
        "strike_intensity": data["strike_intensity"],
        "outside_mandays_C": pool_C * s0_C, "outside_mandays_D": pool_D * s0_D,
        "z_M": data["z_M"], "z_H": data["z_H"],
        "z_log_pool_C": data["log_pool_C"], "z_log_pool_D": data["log_pool_D"],
        "z_log_n_plants": np.log(data["n_plants"]), "z_rival_M": z_rival,
        "supply_shift_C": data["supply_shift_C"], "supply_shift_D": data["supply_shift_D"],
    })

    k = cfg.bargaining_k
    nu_C = 1.0 + a_C / W_C
    nu_D_NB = 1.0 + a_D / W_D
    nu_D = 1.0 + (a_D / W_D) * (1.0 + k * ev["Pi"] / (D * W_D))
    states = pd.DataFrame({
        "plant_id": frame["plant_id"], "year": frame["year"],
        "omega_H": data["omega_H"], "omega_L": data["omega_L"],
        "omega_H_pre": data["omega_H_pre"], "omega_L_pre": data["omega_L_pre"],
        "xi_H": data["xi_H"], "xi_L": data["xi_L"], "eps": eps,
        "Q_planned": Q, "mu": mu, "Pi": ev["Pi"],
        "MRP_C": ev["MRP_C"], "MRP_D": ev["MRP_D"], "MRP_H": ev["MRP_H"], "MRP_M": ev["MRP_M"],
        "nu_C": nu_C, "nu_D_NB": nu_D_NB, "nu_D": nu_D,
        "F_C": cfg.g_C / W_C, "F_D": cfg.g_D / W_D,
        "nu_tilde_C": ev["MRP_C"] / W_C, "nu_tilde_D": ev["MRP_D"] / W_D,
        "a_C": a_C, "a_D": a_D,
        "amenity_C": data["amenity_C"], "amenity_D": data["amenity_D"],
        "s_jr_C": sjr_C, "s0_C": s0_C, "s_cond_C": sc_C,
        "s_jr_D": sjr_D, "s0_D": s0_D, "s_cond_D": sc_D,
        "pool_C": pool_C, "pool_D": pool_D,
        "log_B_norm": ev["log_B"], "log_L_norm": ev["log_L"],
    })
    state = ProductivityState(omega_H=data["omega_H"].copy(), omega_L=data["omega_L"].copy(),
                              xi_H=data["xi_H"].copy(), xi_L=data["xi_L"].copy(), eps=eps.copy())
    truth = Truth(config=cfg, params=params, means=means, states=states)
    return SimulatedPanel(frame=frame, state=state, truth=truth)


def foc_residuals(frame: pd.DataFrame, truth: Truth) -> pd.DataFrame:
    """Relative residuals of the four first-order conditions on a generated panel.

    Recomputes marginal revenue products from the truth's technology and the
    observed quantities, and the labor-supply slopes from the observed
    employment and outside-option sizes.
    """
    cfg = truth.config
    st = truth.states
    m = truth.means
    mu = st["mu"].to_numpy()
    tech = _Technology(cfg, frame["K"].to_numpy(), frame["M"].to_numpy(), frame["H"].to_numpy(),
                       st["omega_L"].to_numpy(), st["omega_H"].to_numpy(), frame["P"].to_numpy(), mu,
                       m.K, m.M, m.H)
    tech.C_bar, tech.D_bar = m.C, m.D
    C = frame["C"].to_numpy()
    D = frame["D"].to_numpy()
    ev = tech.evaluate(C, D)
    group = frame["market_id"].astype(str) + ":" + frame["year"].astype(str)
    from .laborsupply import market_shares
    sjr_C, _, sc_C = market_shares(C, frame["outside_mandays_C"], group)
    sjr_D, _, sc_D = market_shares(D, frame["outside_mandays_D"], group)
    year = frame["year"].to_numpy()
    pC, pD = cfg.labor_C, cfg.labor_D
    a_C = (1 - pC.eta) / (pC.gamma_at(year) * (1 - pC.eta * sc_C - (1 - pC.eta) * sjr_C))
    a_D = (1 - pD.eta) / (pD.gamma_at(year) * (1 - pD.eta * sc_D - (1 - pD.eta) * sjr_D))
    W_C = frame["W_C"].to_numpy()
    W_D = frame["W_D"].to_numpy()
    k = cfg.bargaining_k
    return pd.DataFrame({
        "H": frame["W_H"].to_numpy() / ev["MRP_H"] - 1.0,
        "M": frame["P_M"].to_numpy() / ev["MRP_M"] - 1.0,
        "C": (W_C + a_C + cfg.g_C) / ev["MRP_C"] - 1.0,
        "D": (W_D + a_D * (1 + k * ev["Pi"] / (D * W_D)) + cfg.g_D) / ev["MRP_D"] - 1.0,
    })


# ---------------------------------------------------------------------------
# Standalone labor-market generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaborMarketConfig:
    """Stand-alone labor-market simulation with reduced-form labor demand.

    Marginal revenue products are ``A_j,X * exp(a_j + lam*z_jt) * X**(-kappa)``
    with ``z_jt`` uniform with unit variance (bounded, so every plant can hire).
    Wages follow wage posting for both types.
    """

    labor_C: LaborSupplyParams = field(default_factory=_default_labor_C)
    labor_D: LaborSupplyParams = field(default_factory=_default_labor_D)
    n_markets: int = 10
    min_plants: int = 4
    max_plants: int = 6
    n_years: int = 10
    first_year: int = 2001
    kappa: float = 0.5
    log_A_C: float = 10.3
    log_A_D: float = 11.6
    W0: float = 200.0
    z_loading: float = 0.8
    sd_plant: float = 0.2
    amenity_fe_sd: float = 0.2
    amenity_sd: float = 0.2
    log_pool: float = 13.0
    pool_sd: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.min_plants <= self.max_plants:
            raise ConfigurationError("plants per market must satisfy 1 <= min <= max")
        if self.kappa <= 0:
            raise ConfigurationError("kappa must be positive")


def simulate_labor_market(config: LaborMarketConfig) -> pd.DataFrame:
    """Generate a nested-logit labor-supply estimation dataset.

    Columns per worker type ``X`` in {C, D}: ``W_X``, ``s_jr_X``, ``s0_X``,
    ``s_cond_X``, ``amenity_X`` (the structural error).  Shared columns:
    ``plant_id``, ``market_id``, ``year`` and the instruments ``z_own``,
    ``z_rival`` and ``z_log_n_plants``.
    """
    cfg = config
    ss = np.random.SeedSequence(cfg.seed).spawn(cfg.n_markets + 1)
    g0 = np.random.default_rng(ss[0])
    sizes = g0.integers(cfg.min_plants, cfg.max_plants + 1, size=cfg.n_markets)
    T = cfg.n_years
    years = np.arange(cfg.first_year, cfg.first_year + T)
    rows = []
    pid = 1
    for r in range(cfg.n_markets):
        rng = np.random.default_rng(ss[r + 1])
        n_r = int(sizes[r])
        a = cfg.sd_plant * rng.standard_normal(n_r)
        z = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(T, n_r))
        amen_fe = rng.standard_normal((2, n_r))
        amen = rng.standard_normal((2, T, n_r))
        pool = cfg.log_pool + cfg.pool_sd * rng.standard_normal((2, T))
        for t in range(T):
            for j in range(n_r):
                rows.append((pid + j, r + 1, years[t], t, a[j], z[t, j],
                             cfg.amenity_fe_sd * amen_fe[0, j] + cfg.amenity_sd * amen[0, t, j],
                             cfg.amenity_fe_sd * amen_fe[1, j] + cfg.amenity_sd * amen[1, t, j],
                             pool[0, t], pool[1, t], n_r))
        pid += n_r
    df = pd.DataFrame(rows, columns=["plant_id", "market_id", "year", "t", "a", "z_own", "amenity_C",
                                     "amenity_D", "log_pool_C", "log_pool_D", "n_plants"])
    df = df.sort_values(["plant_id", "year"], kind="mergesort").reset_index(drop=True)
    n = len(df)
    group = ((df["market_id"].to_numpy() - 1) * T + df["t"].to_numpy()).astype(np.int64)
    n_groups = cfg.n_markets * T
    year = df["year"].to_numpy()
    shifter = df["a"].to_numpy() + cfg.z_loading * df["z_own"].to_numpy()
    labels = lambda i: f"plant_id={int(df['plant_id'].iat[i])}, year={int(year[i])}"  # noqa: E731

    out = df[["plant_id", "market_id", "year"]].copy()
    for X, params, log_A in (("C", cfg.labor_C, cfg.log_A_C), ("D", cfg.labor_D, cfg.log_A_D)):
        gt = np.asarray(params.gamma_at(year), dtype=float)
        if np.any(gt <= 0):
            raise ConfigurationError(f"wage coefficient of type {X} is not positive in every year")
        side = _LaborSide(base=params.intercept + params.trend * df["t"].to_numpy()
                          + df[f"amenity_{X}"].to_numpy(),
                          gamma_t=gt, eta=params.eta, log_pool=df[f"log_pool_{X}"].to_numpy(),
                          group=group, n_groups=n_groups)
        def best_response(x, side=side, log_A=log_A):
            lem = side.log_E_minus(np.exp(x))

            def res(z, idx):
                w = np.exp(z)
                q, _, _, _, slope = side.quantities(w, lem, idx)
                mrp = np.exp(log_A + shifter[idx]) * q ** (-cfg.kappa)
                return (w + slope) / mrp - 1.0

            return _solve_increasing(res, x - 1.0, x + 1.0, labels)

        W = np.exp(_damped_fixed_point(best_response, np.full(n, np.log(cfg.W0)), labels))
        lem = side.log_E_minus(W)
        q, s_jr, s_0, s_cond, _ = side.quantities(W, lem)
        if np.any(s_jr <= 0) or np.any(s_0 <= 0) or np.any(s_jr >= 1):
            raise ConfigurationError("shares left the unit interval; market size too small")
        out[f"W_{X}"] = W
        out[f"{X}"] = q
        out[f"s_jr_{X}"] = s_jr
        out[f"s0_{X}"] = s_0
        out[f"s_cond_{X}"] = s_cond
        out[f"amenity_{X}"] = df[f"amenity_{X}"].to_numpy()
    zsum = _group_sum(df["z_own"].to_numpy(), group, n_groups)[group]
    cnt = df["n_plants"].to_numpy().astype(float)
    out["z_own"] = df["z_own"].to_numpy()
    out["z_rival"] = np.where(cnt > 1, (zsum - df["z_own"].to_numpy()) / np.maximum(cnt - 1, 1), 0.0)
    out["z_log_n_plants"] = np.log(cnt)
    return out


# ---------------------------------------------------------------------------
# File output
# ---------------------------------------------------------------------------


def truth_path(csv_path: str | Path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".truth")


def write_simulation(sim: SimulatedPanel, csv_path: str | Path) -> tuple[Path, Path]:
    """Write the panel CSV and its ``.truth`` sidecar."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    sim.frame.to_csv(csv_path, index=False, float_format="%.17g")
    tp = truth_path(csv_path)
    tp.write_text(sim.truth.to_json())
    return csv_path, tp


def read_truth(csv_path: str | Path) -> Truth:
    return Truth.from_json(truth_path(csv_path).read_text())
