"""State-space separation of Hicks-neutral productivity from measurement error.

The composite residual ``omega_tilde = log Q_tilde_norm - log f`` equals
``omega_H + eps``.  Writing ``omega_H`` as its controlled AR(1) gives the
measurement equation

    omega_tilde_t = iota_t + rho*omega_tilde_{t-1} + b1*IDA_t + b2*Imp_t
                    + xi_t + eps_t - rho*eps_{t-1}

with state ``pi_t = (xi_t, eps_t, eps_{t-1})`` and ``Var(xi) = sigma_H**2``,
``Var(eps) = 1``.  The filter runs per plant over consecutive years and
restarts after a gap.

The numerical kernels live in a compiled extension when it is available and
fall back to a pure-Python implementation otherwise (set the environment
variable ``CESMARKDOWN_PURE_PYTHON=1`` to force the fallback).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kalman_py
from .errors import EstimationError, ParameterError

if os.environ.get("CESMARKDOWN_PURE_PYTHON", "") not in ("", "0"):
    _backend = _kalman_py
    BACKEND = "python"
else:
    try:
        from . import _kalman_ext as _backend  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _backend = _kalman_py
        BACKEND = "python"


def get_backend(name: str | None = None):
    """Return the kernel module ``"compiled"`` or ``"python"`` (default: active one)."""
    if name is None:
        return _backend
    if name == "python":
        return _kalman_py
    if name == "compiled":
        from . import _kalman_ext  # type: ignore[attr-defined]
        return _kalman_ext
    raise ValueError(f"unknown backend {name!r}")


@dataclass
class StateSpaceSpec:
    """Measurement data and fixed coefficients of the Hicks-neutral state space.

    Arrays are aligned with panel rows (sorted by plant and year).  ``lag_idx``
    gives the row of the previous-year observation of the same plant or -1.
    """

    omega_tilde: np.ndarray
    lag_idx: np.ndarray
    IDA: np.ndarray
    Imp: np.ndarray
    iota: np.ndarray
    rho: float
    beta1: float
    beta2: float
    # derived
    measured: np.ndarray = field(init=False, repr=False)
    y: np.ndarray = field(init=False, repr=False)
    starts: np.ndarray = field(init=False, repr=False)
    lengths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.omega_tilde = np.asarray(self.omega_tilde, dtype=float)
        self.lag_idx = np.asarray(self.lag_idx, dtype=np.int64)
        self.IDA = np.asarray(self.IDA, dtype=float)
        self.Imp = np.asarray(self.Imp, dtype=float)
        self.iota = np.asarray(self.iota, dtype=float)
        self.measured = np.flatnonzero(self.lag_idx >= 0)
        m = self.measured
        prev = self.lag_idx[m]
        self.y = (self.omega_tilde[m] - self.rho * self.omega_tilde[prev]
                  - self.beta1 * self.IDA[m] - self.beta2 * self.Imp[m] - self.iota[m])
        if not np.all(np.isfinite(self.y)):
            raise EstimationError("non-finite measurement in state-space data")
        # a measurement continues a segment when its lag row was itself measured
        new_seg = self.lag_idx[prev] < 0
        starts = np.flatnonzero(new_seg)
        self.starts = starts.astype(np.int64)
        self.lengths = np.diff(np.append(starts, len(m))).astype(np.int64)

    # printed system matrices -------------------------------------------------
    @property
    def H(self) -> np.ndarray:
        return np.array([1.0, 1.0, -self.rho])

    @property
    def A(self) -> np.ndarray:
        return np.array([self.rho, self.beta1, self.beta2])

    @property
    def F(self) -> np.ndarray:
        return _kalman_py.F.copy()

    @property
    def G(self) -> np.ndarray:
        return _kalman_py.G.copy()

    def Sigma(self, sigma_H2: float) -> np.ndarray:
        return np.diag([sigma_H2, 1.0])

    @property
    def n_measurements(self) -> int:
        return int(len(self.y))


@dataclass
class SmootherOutput:
    """Smoothed decomposition aligned with panel rows."""

    xi_hat: np.ndarray
    eps_hat: np.ndarray
    omega_H_hat: np.ndarray
    sigma_H: float
    se_sigma_H: float
    loglik: float
    n_pinv: int = 0
    boundary: bool = False


def kalman_loglik(spec: StateSpaceSpec, sigma_H2: float, backend: str | None = None) -> float:
    """Log-likelihood ``sum(-log N - nu**2/N)``; ``-inf`` when an innovation variance is not positive."""
    if not sigma_H2 >= 0:
        raise ParameterError("sigma_H2 must be non-negative")
    kern = get_backend(backend)
    return float(kern.filter_loglik(spec.y, spec.starts, spec.lengths, float(spec.rho), float(sigma_H2)))


def estimate_sigma_H(spec: StateSpaceSpec, *, upper: float | None = None, grid: int = 40,
                     backend: str | None = None) -> tuple[float, float, float, bool]:
    """Maximum-likelihood estimate of the Hicks-neutral innovation standard deviation.

    A grid over ``[0, upper]`` brackets the maximum, then a bounded Brent
    search refines it.  The standard error comes from the numerical second
    derivative of the log-likelihood; because the objective omits the usual
    one-half factor, the information is half its negative curvature.

    Returns
    -------
    sigma_H, se, loglik, boundary
        ``boundary`` is True when the maximum is at ``sigma_H = 0``.
    """
    if spec.n_measurements == 0:
        raise EstimationError("no measurements available for the state-space likelihood")
    if upper is None:
        upper = max(4.0 * float(np.var(spec.y)), 1.0)

    def ll(s2: float) -> float:
        return kalman_loglik(spec, s2, backend)

    pts = np.concatenate([[0.0], upper * np.linspace(0.0, 1.0, grid + 1)[1:] ** 2])
    vals = np.array([ll(p) for p in pts])
    k = int(np.argmax(vals))
    lo = pts[max(k - 1, 0)]
    hi = pts[min(k + 1, len(pts) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda s: -ll(s), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12 * max(hi, 1.0), "maxiter": 500})
        s2_hat, ll_hat = float(res.x), -float(res.fun)
    else:
        s2_hat, ll_hat = float(pts[k]), float(vals[k])
    if vals[0] >= ll_hat:
        s2_hat, ll_hat = 0.0, float(vals[0])
    boundary = s2_hat <= 1e-10 * max(upper, 1.0)
    sigma = math.sqrt(max(s2_hat, 0.0))
    se = float("nan")
    if not boundary:
        h = 1e-4 * max(s2_hat, 1e-3)
        h = min(h, 0.5 * s2_hat)
        curv = (ll(s2_hat + h) - 2.0 * ll_hat + ll(s2_hat - h)) / (h * h)
        if curv < 0:
            se_s2 = math.sqrt(-2.0 / curv)
            se = se_s2 / (2.0 * sigma)
    return sigma, se, ll_hat, boundary


def loglik_curvature(spec: StateSpaceSpec, sigma_H2: float, rel_step: float = 1e-4) -> float:
    """Central second difference of the log-likelihood in ``sigma_H2``."""
    h = rel_step * max(sigma_H2, 1e-3)
    f0 = kalman_loglik(spec, sigma_H2)
    return (kalman_loglik(spec, sigma_H2 + h) - 2.0 * f0 + kalman_loglik(spec, sigma_H2 - h)) / (h * h)


def kalman_smooth(spec: StateSpaceSpec, sigma_H2: float, *, backend: str | None = None,
                  se_sigma_H: float = float("nan"), boundary: bool = False) -> SmootherOutput:
    """Smoothed innovations and the implied Hicks-neutral productivity path.

    ``xi_hat`` is NaN for rows without a measurement (first year of a run).
    ``eps_hat`` is filled for every row: rows without a measurement take the
    smoothed lag slot of the following measurement.  ``omega_H_hat`` anchors at
    ``omega_tilde - eps_hat`` in the first year of a run and then accumulates
    the AR law with smoothed innovations.
    """
    if not sigma_H2 >= 0:
        raise ParameterError("sigma_H2 must be non-negative")
    kern = get_backend(backend)
    xi_m, eps_m, lag_m, n_flag = kern.smooth(spec.y, spec.starts, spec.lengths, float(spec.rho),
                                             float(sigma_H2))
    n = len(spec.omega_tilde)
    m = spec.measured
    xi = np.full(n, np.nan)
    eps = np.zeros(n)
    xi[m] = xi_m
    eps[m] = eps_m
    prev = spec.lag_idx[m]
    anchor = spec.lag_idx[prev] < 0
    eps[prev[anchor]] = lag_m[anchor]

    omega = np.empty(n)
    for i in range(n):  # rows are sorted by plant and year
        j = spec.lag_idx[i]
        if j < 0:
            omega[i] = spec.omega_tilde[i] - eps[i]
        else:
            omega[i] = (spec.iota[i] + spec.rho * omega[j] + spec.beta1 * spec.IDA[i]
                        + spec.beta2 * spec.Imp[i] + xi[i])
    ll = kalman_loglik(spec, sigma_H2, backend)
    return SmootherOutput(xi_hat=xi, eps_hat=eps, omega_H_hat=omega, sigma_H=math.sqrt(sigma_H2),
                          se_sigma_H=se_sigma_H, loglik=ll, n_pinv=int(n_flag), boundary=boundary)
