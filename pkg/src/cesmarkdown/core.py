"""Domain types and the normalized nested-CES production algebra.

Every quantity entering the production function is normalized by its sample
geometric mean, ``X_norm = X / X_bar``.  At the baseline point (all normalized
inputs equal to one and zero productivity) the nests and the top-level CES
kernel evaluate to one, so the share parameters can be read off baseline
expenditure ratios.

Functions in this module are vectorized: scalars, numpy arrays and pandas
series are accepted wherever a real number is documented.  Observation-like
arguments may be a :class:`PanelObservation`, a mapping, or a ``DataFrame``.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigurationError, DomainError, ParameterError

#: Smallest quantity accepted by the evaluators.  Smaller values are rejected
#: rather than clamped so that data errors surface.
MIN_QUANTITY = 1e-300

_SHARE_TOL = 1e-9


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PanelObservation:
    """One establishment-year."""

    plant_id: Any
    year: int
    market_id: Any
    Q_obs: float
    P: float
    K: float
    M: float
    P_M: float
    H: float
    W_H: float
    C: float
    W_C: float
    D: float
    W_D: float
    IDA: float = 0.0
    Imp_lag: int = 0
    strike_intensity: float = float("nan")
    outside_mandays_C: float = float("nan")
    outside_mandays_D: float = float("nan")
    extra_instruments: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("Q_obs", "P", "K", "M", "P_M", "H", "W_H", "C", "W_C", "D", "W_D"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise DomainError(f"{name} must be strictly positive, got {value!r}")
        if self.Imp_lag not in (0, 1):
            raise DomainError(f"Imp_lag must be 0 or 1, got {self.Imp_lag!r}")
        if np.isfinite(self.strike_intensity) and self.strike_intensity < 0:
            raise DomainError("strike_intensity must be non-negative")


_MEAN_FIELDS = ("Q", "K", "M", "H", "C", "D", "W_H", "W_C", "W_D", "P_M", "W_B", "W_L", "B", "L")


@dataclass(frozen=True)
class GeometricMeans:
    """Baseline (geometric-mean) levels used for normalization.

    The blue-collar and total-labor baselines ``B``, ``L`` and their price
    indices ``W_B``, ``W_L`` satisfy the expenditure adding-up identities
    ``W_B*B = W_C*C + W_D*D`` and ``W_L*L = W_H*H + W_B*B``.
    """

    Q: float
    K: float
    M: float
    H: float
    C: float
    D: float
    W_H: float
    W_C: float
    W_D: float
    P_M: float
    W_B: float
    W_L: float
    B: float
    L: float

    def __post_init__(self) -> None:
        for name in _MEAN_FIELDS:
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise DomainError(f"geometric mean {name} must be strictly positive, got {value!r}")
        blue = self.W_C * self.C + self.W_D * self.D
        if abs(self.W_B * self.B - blue) > _SHARE_TOL * blue:
            raise DomainError("W_B*B must equal W_C*C + W_D*D")
        labor = self.W_H * self.H + blue
        if abs(self.W_L * self.L - labor) > _SHARE_TOL * labor:
            raise DomainError("W_L*L must equal W_H*H + W_B*B")

    @classmethod
    def from_levels(cls, *, Q, K, M, H, C, D, W_H, W_C, W_D, P_M, B=None, L=None) -> "GeometricMeans":
        """Build means from the ten primitive baselines.

        ``B`` and ``L`` default to ``C + D`` and ``H + C + D``; the price
        indices are then fixed by the adding-up identities.
        """
        B = float(C + D) if B is None else float(B)
        L = float(H + C + D) if L is None else float(L)
        W_B = (W_C * C + W_D * D) / B
        W_L = (W_H * H + W_B * B) / L
        return cls(Q=float(Q), K=float(K), M=float(M), H=float(H), C=float(C), D=float(D),
                   W_H=float(W_H), W_C=float(W_C), W_D=float(W_D), P_M=float(P_M),
                   W_B=float(W_B), W_L=float(W_L), B=B, L=L)

    @classmethod
    def from_frame(cls, frame) -> "GeometricMeans":
        """Sample geometric means of a panel table."""

        def gm(values) -> float:
            values = np.asarray(values, dtype=float)
            _check_positive(values, "geometric-mean input")
            return float(np.exp(np.mean(np.log(values))))

        C = np.asarray(frame["C"], dtype=float)
        D = np.asarray(frame["D"], dtype=float)
        H = np.asarray(frame["H"], dtype=float)
        return cls.from_levels(
            Q=gm(frame["Q_obs"]), K=gm(frame["K"]), M=gm(frame["M"]), H=gm(H), C=gm(C), D=gm(D),
            W_H=gm(frame["W_H"]), W_C=gm(frame["W_C"]), W_D=gm(frame["W_D"]), P_M=gm(frame["P_M"]),
            B=gm(C + D), L=gm(H + C + D),
        )

    # baseline expenditures -------------------------------------------------
    @property
    def exp_M(self) -> float:
        return self.P_M * self.M

    @property
    def exp_H(self) -> float:
        return self.W_H * self.H

    @property
    def exp_C(self) -> float:
        return self.W_C * self.C

    @property
    def exp_D(self) -> float:
        return self.W_D * self.D

    @property
    def exp_B(self) -> float:
        return self.W_B * self.B

    @property
    def exp_L(self) -> float:
        return self.W_L * self.L

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "GeometricMeans":
        return cls(**{k: float(data[k]) for k in _MEAN_FIELDS})


@dataclass(frozen=True)
class ProductionParams:
    """CES exponents, share parameters and the capital distortion."""

    sigma_O: float
    sigma_M: float
    sigma_I: float
    tau: float
    alpha_K: float
    alpha_M: float
    alpha_L: float
    alpha_H: float
    alpha_B: float
    alpha_C: float
    alpha_D: float
    means: GeometricMeans | None = None

    def __post_init__(self) -> None:
        for name in ("sigma_O", "sigma_M", "sigma_I"):
            value = getattr(self, name)
            if value == 0 or value > 1 or not np.isfinite(value):
                raise ParameterError(f"{name} must be nonzero and at most 1, got {value!r}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau!r}")
        for name in ("alpha_K", "alpha_M", "alpha_L", "alpha_H", "alpha_B", "alpha_C", "alpha_D"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {value!r}")
        checks = (
            (self.alpha_K + self.alpha_M + self.alpha_L, "alpha_K + alpha_M + alpha_L"),
            (self.alpha_H + self.alpha_B, "alpha_H + alpha_B"),
            (self.alpha_C + self.alpha_D, "alpha_C + alpha_D"),
        )
        for total, label in checks:
            if abs(total - 1.0) > _SHARE_TOL:
                raise ParameterError(f"{label} must equal 1, got {total!r}")
        if abs(self.alpha_K - self.tau * self.alpha_M) > _SHARE_TOL:
            raise ParameterError("alpha_K must equal tau * alpha_M")

    @classmethod
    def from_tau(cls, sigma_O: float, sigma_M: float, sigma_I: float, tau: float,
                 means: GeometricMeans) -> "ProductionParams":
        """Derive every share from baseline expenditures and ``tau``."""
        a_K, a_M, a_L = shares_from_tau(tau, means)
        a_C, a_D, a_H, a_B = worker_shares_from_means(means)
        return cls(sigma_O=sigma_O, sigma_M=sigma_M, sigma_I=sigma_I, tau=tau,
                   alpha_K=a_K, alpha_M=a_M, alpha_L=a_L, alpha_H=a_H, alpha_B=a_B,
                   alpha_C=a_C, alpha_D=a_D, means=means)

    @property
    def sigmas(self) -> tuple[float, float, float]:
        return (self.sigma_O, self.sigma_M, self.sigma_I)

    @property
    def worker_shares(self) -> tuple[float, float, float, float]:
        return (self.alpha_C, self.alpha_D, self.alpha_H, self.alpha_B)

    def to_dict(self) -> dict[str, Any]:
        out = {k: v for k, v in asdict(self).items() if k != "means"}
        if self.means is not None:
            out["means"] = self.means.to_dict()
        return out


@dataclass(frozen=True)
class ProductivityParams:
    """Laws of motion for Hicks-neutral (H) and labor-augmenting (L) productivity.

    ``sigma_L`` is the innovation standard deviation of the labor-augmenting
    process.  It is only used by the data generator.
    """

    rho_H: float = 0.880
    rho_L: float = 0.885
    beta_H1: float = -0.031
    beta_H2: float = -0.071
    beta_L1: float = 0.010
    beta_L2: float = -0.044
    iota_H_t: dict[int, float] = field(default_factory=dict)
    iota_L_t: dict[int, float] = field(default_factory=dict)
    sigma_H: float = 0.725
    sigma_eps: float = 1.0
    sigma_L: float = 0.02

    def __post_init__(self) -> None:
        if self.sigma_H < 0 or self.sigma_L < 0:
            raise ParameterError("innovation standard deviations must be non-negative")
        if self.sigma_eps != 1.0:
            raise ParameterError("the measurement-error standard deviation is fixed at 1.0")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["iota_H_t"] = {str(k): v for k, v in self.iota_H_t.items()}
        out["iota_L_t"] = {str(k): v for k, v in self.iota_L_t.items()}
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProductivityParams":
        data = dict(data)
        for key in ("iota_H_t", "iota_L_t"):
            data[key] = {int(k): float(v) for k, v in data.get(key, {}).items()}
        return cls(**data)


@dataclass
class ProductivityState:
    """Per-observation latent productivity states (aligned with the panel rows)."""

    omega_H: np.ndarray
    omega_L: np.ndarray
    xi_H: np.ndarray
    xi_L: np.ndarray
    eps: np.ndarray


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _field(obs, name: str) -> np.ndarray:
    if isinstance(obs, Mapping) or hasattr(obs, "columns"):
        value = obs[name]
    else:
        value = getattr(obs, name)
    return np.asarray(value, dtype=float)


def _check_positive(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    bad = ~(x >= MIN_QUANTITY)
    if np.any(bad):
        first = np.flatnonzero(np.atleast_1d(bad))[0]
        raise DomainError(f"{name} must be positive and at least {MIN_QUANTITY:g}; "
                          f"offending value {np.atleast_1d(x)[first]!r} at position {first}")
    return x


def _check_sigma(sigma: float, name: str) -> None:
    if sigma == 0 or not np.isfinite(sigma):
        raise ParameterError(f"{name} must be finite and nonzero")


def _scalarize(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def log_ces2(log_x1, log_x2, a1: float, a2: float, sigma: float) -> np.ndarray:
    """Log of ``(a1*x1**sigma + a2*x2**sigma)**(1/sigma)`` evaluated in log space.

    ``sigma = 1`` gives linear aggregation, which is also the continuous limit.
    Zero share weights are allowed and drop the corresponding term.
    """
    _check_sigma(sigma, "sigma")
    with np.errstate(divide="ignore"):
        la1, la2 = np.log(a1), np.log(a2)
    return np.logaddexp(la1 + sigma * np.asarray(log_x1), la2 + sigma * np.asarray(log_x2)) / sigma


def log_blue_collar(C_norm, D_norm, alpha_C: float, alpha_D: float, sigma_I: float) -> np.ndarray:
    """Log of the normalized blue-collar aggregate."""
    C_norm = _check_positive(C_norm, "C_norm")
    D_norm = _check_positive(D_norm, "D_norm")
    return log_ces2(np.log(C_norm), np.log(D_norm), alpha_C, alpha_D, sigma_I)


def log_labor_aggregate(H_norm, C_norm, D_norm, sigma_M: float, sigma_I: float,
                        worker_shares) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(log B_norm, log L_norm)`` from normalized worker quantities."""
    a_C, a_D, a_H, a_B = worker_shares
    log_B = log_blue_collar(C_norm, D_norm, a_C, a_D, sigma_I)
    H_norm = _check_positive(H_norm, "H_norm")
    log_L = log_ces2(np.log(H_norm), log_B, a_H, a_B, sigma_M)
    return log_B, log_L


def log_kernel(K_norm, M_norm, L_norm, omega_L, alpha_K: float, alpha_M: float,
               alpha_L: float, sigma_O: float) -> np.ndarray:
    """Log of the top-level CES kernel ``alpha_K K^s + alpha_M M^s + alpha_L (e^wL L)^s``."""
    _check_sigma(sigma_O, "sigma_O")
    with np.errstate(divide="ignore"):
        terms = (
            np.log(alpha_K) + sigma_O * np.log(_check_positive(K_norm, "K_norm")),
            np.log(alpha_M) + sigma_O * np.log(_check_positive(M_norm, "M_norm")),
            np.log(alpha_L) + sigma_O * (np.asarray(omega_L, dtype=float)
                                         + np.log(_check_positive(L_norm, "L_norm"))),
        )
    return np.logaddexp(np.logaddexp(terms[0], terms[1]), terms[2])


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def blue_collar_nest(C_norm, D_norm, params: ProductionParams):
    """Normalized blue-collar aggregate ``(a_C C^s + a_D D^s)^(1/s)`` with ``s = sigma_I``."""
    _check_sigma(params.sigma_I, "sigma_I")
    return _scalarize(np.exp(log_blue_collar(C_norm, D_norm, params.alpha_C, params.alpha_D,
                                             params.sigma_I)))


def labor_nest(H_norm, B_norm, params: ProductionParams):
    """Normalized labor aggregate of white-collar and blue-collar labor."""
    _check_sigma(params.sigma_M, "sigma_M")
    H_norm = _check_positive(H_norm, "H_norm")
    B_norm = _check_positive(B_norm, "B_norm")
    return _scalarize(np.exp(log_ces2(np.log(H_norm), np.log(B_norm), params.alpha_H,
                                      params.alpha_B, params.sigma_M)))


def planned_output(K_norm, M_norm, L_norm, omega_L, omega_H, params: ProductionParams):
    """Planned output in levels, ``Q_bar * kernel**(1/sigma_O) * exp(omega_H)``.

    Parameters
    ----------
    K_norm, M_norm, L_norm : array_like
        Normalized capital, materials and labor aggregate.
    omega_L, omega_H : array_like
        Labor-augmenting and Hicks-neutral log productivity.
    params : ProductionParams
        Must carry ``means`` (for ``Q_bar``).
    """
    if params.means is None:
        raise ConfigurationError("planned_output needs params.means for the output baseline")
    log_S = log_kernel(K_norm, M_norm, L_norm, omega_L, params.alpha_K, params.alpha_M,
                       params.alpha_L, params.sigma_O)
    log_q = np.log(params.means.Q) + log_S / params.sigma_O + np.asarray(omega_H, dtype=float)
    return _scalarize(np.exp(log_q))


def shares_from_tau(tau: float, means) -> tuple[float, float, float]:
    """Top-level shares ``(alpha_K, alpha_M, alpha_L)`` implied by ``tau`` and baseline expenditures."""
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau!r}")
    e_M = _field(means, "P_M") * _field(means, "M")
    e_L = _field(means, "W_L") * _field(means, "L")
    if not (e_M > 0 and e_L > 0):
        raise DomainError("baseline materials and labor expenditures must be positive")
    denom = e_M * (1.0 + tau) + e_L
    alpha_M = float(e_M / denom)
    alpha_L = float(e_L / denom)
    alpha_K = tau * alpha_M
    return alpha_K, alpha_M, alpha_L


def worker_shares_from_means(means) -> tuple[float, float, float, float]:
    """Worker shares ``(alpha_C, alpha_D, alpha_H, alpha_B)`` from baseline expenditures."""
    e_C = float(_field(means, "W_C") * _field(means, "C"))
    e_D = float(_field(means, "W_D") * _field(means, "D"))
    e_H = float(_field(means, "W_H") * _field(means, "H"))
    e_B = e_C + e_D
    if e_B <= 0:
        raise DomainError("total blue-collar baseline expenditure is zero")
    if e_H + e_B <= 0:
        raise DomainError("total labor baseline expenditure is zero")
    alpha_C = e_C / e_B
    alpha_H = e_H / (e_H + e_B)
    return alpha_C, 1.0 - alpha_C, alpha_H, 1.0 - alpha_H


def _named_finite(name: str, value) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise DomainError(f"non-finite value in term '{name}'")
    return value


def omega_L_characterization(obs, sigmas, worker_shares, means):
    """Labor-augmenting productivity implied by the white-collar/materials FOC ratio.

    Parameters
    ----------
    obs : observation-like
        Needs ``H, W_H, M, P_M, C, D`` in levels.
    sigmas : tuple
        ``(sigma_O, sigma_M, sigma_I)``.
    worker_shares : tuple
        ``(alpha_C, alpha_D, alpha_H, alpha_B)``.
    means : GeometricMeans

    Returns
    -------
    float or ndarray
        The normalized log productivity ``omega_L``.
    """
    sigma_O, sigma_M, sigma_I = sigmas
    _check_sigma(sigma_O, "sigma_O")
    alpha_H = worker_shares[2]
    H = _check_positive(_field(obs, "H"), "H")
    M = _check_positive(_field(obs, "M"), "M")
    W_H = _check_positive(_field(obs, "W_H"), "W_H")
    P_M = _check_positive(_field(obs, "P_M"), "P_M")
    C = _check_positive(_field(obs, "C"), "C")
    D = _check_positive(_field(obs, "D"), "D")

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        share_term = _named_finite("log alpha_H", -np.log(alpha_H))
        expenditure_term = _named_finite("log expenditure ratio W_H*H/(P_M*M)",
                                         np.log(W_H * H) - np.log(P_M * M))
        baseline_term = _named_finite("log baseline expenditure ratio",
                                      np.log(means.exp_M) - np.log(means.exp_L))
        _, log_L = log_labor_aggregate(H / means.H, C / means.C, D / means.D, sigma_M, sigma_I,
                                       worker_shares)
        aggregate_term = _named_finite("labor aggregate", (sigma_M / sigma_O - 1.0) * log_L)
        materials_term = _named_finite("log M_norm", np.log(M / means.M))
        white_term = _named_finite("log H_norm", -(sigma_M / sigma_O) * np.log(H / means.H))
    omega = ((share_term + expenditure_term + baseline_term) / sigma_O
             + aggregate_term + materials_term + white_term)
    return _scalarize(omega)


def log_f_tau(obs, tau: float, sigmas, omega_L_hat, L_hat_norm, means):
    """Log of the output index ``f(tau)`` net of Hicks-neutral productivity.

    ``log f = (1/sigma_O) * [log alpha_M(tau) + log(tau K^s + M^s + (E_L/E_M)(e^wL L)^s)]``
    with ``s = sigma_O`` and ``E_L/E_M`` the baseline labor-to-materials
    expenditure ratio.
    """
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau!r}")
    sigma_O = sigmas[0]
    _check_sigma(sigma_O, "sigma_O")
    K_norm = _check_positive(_field(obs, "K"), "K") / means.K
    M_norm = _check_positive(_field(obs, "M"), "M") / means.M
    ratio = means.exp_L / means.exp_M
    log_alpha_M = np.log(means.exp_M) - np.log(means.exp_M * (1.0 + tau) + means.exp_L)
    log_kern = log_kernel(K_norm, M_norm, L_hat_norm, omega_L_hat, tau, 1.0, ratio, sigma_O)
    return _scalarize((log_alpha_M + log_kern) / sigma_O)


def dlog_f_dtau(obs, tau: float, sigmas, omega_L_hat, L_hat_norm, means):
    """Analytic derivative of :func:`log_f_tau` with respect to ``tau``."""
    sigma_O = sigmas[0]
    K_norm = _check_positive(_field(obs, "K"), "K") / means.K
    M_norm = _check_positive(_field(obs, "M"), "M") / means.M
    ratio = means.exp_L / means.exp_M
    alpha_M = means.exp_M / (means.exp_M * (1.0 + tau) + means.exp_L)
    kern = np.exp(log_kernel(K_norm, M_norm, L_hat_norm, omega_L_hat, tau, 1.0, ratio, sigma_O))
    return _scalarize((-alpha_M + K_norm ** sigma_O / kern) / sigma_O)


def productivity_step(prev_omega, params: ProductivityParams, which: str, IDA, Imp_lag, xi, year: int):
    """One step of the controlled AR(1): ``iota_t + rho*prev + b1*IDA + b2*Imp + xi``."""
    if which == "H":
        rho, b1, b2, iota = params.rho_H, params.beta_H1, params.beta_H2, params.iota_H_t
    elif which == "L":
        rho, b1, b2, iota = params.rho_L, params.beta_L1, params.beta_L2, params.iota_L_t
    else:
        raise ConfigurationError(f"which must be 'H' or 'L', got {which!r}")
    if year not in iota:
        raise ConfigurationError(f"no year effect for year {year} in iota_{which}_t")
    return iota[year] + rho * prev_omega + b1 * IDA + b2 * Imp_lag + xi
