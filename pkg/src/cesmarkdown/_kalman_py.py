"""Pure-Python Kalman filter and smoother for the Hicks-neutral state space.

This is the fallback used when the compiled extension is unavailable.  It
writes the recursions with explicit matrices so that it can double as a
readable reference for the compiled kernel.

State ``pi_t = (xi_t, eps_t, eps_{t-1})``; transition ``pi_t = F pi_{t-1} + G u_t``
with ``u_t ~ N(0, diag(s2, 1))``; measurement ``y_t = h pi_t`` with
``h = (1, 1, -rho)``.  ``y`` holds the measurements of all segments back to
back, and ``starts``/``lengths`` delimit the segments.  Each segment restarts
from ``pi_{0|0} = 0`` and ``P_{0|0} = G Sigma G'``.
"""

from __future__ import annotations

import math

import numpy as np

F = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
G = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
_SINGULAR_RTOL = 1e-14


def _system(rho: float, s2: float):
    h = np.array([1.0, 1.0, -rho])
    Q = G @ np.diag([s2, 1.0]) @ G.T
    return h, Q


def _filter_segment(y: np.ndarray, h: np.ndarray, Q: np.ndarray):
    n = len(y)
    pi_f = np.zeros((n, 3))
    P_f = np.zeros((n, 3, 3))
    pi_p = np.zeros((n, 3))
    P_p = np.zeros((n, 3, 3))
    terms = []
    pi = np.zeros(3)
    P = Q.copy()
    for t in range(n):
        pi_pred = F @ pi
        P_pred = F @ P @ F.T + Q
        nu = y[t] - h @ pi_pred
        N = float(h @ P_pred @ h)
        if not N > 0:
            return None
        K = P_pred @ h / N
        pi = pi_pred + K * nu
        P = P_pred - np.outer(K, h @ P_pred)
        pi_f[t], P_f[t], pi_p[t], P_p[t] = pi, P, pi_pred, P_pred
        terms.append(-math.log(N) - nu * nu / N)
    return pi_f, P_f, pi_p, P_p, terms


def filter_loglik(y, starts, lengths, rho: float, s2: float) -> float:
    """Sum over segments and periods of ``-log N_t - nu_t**2 / N_t``."""
    y = np.asarray(y, dtype=float)
    h, Q = _system(rho, s2)
    terms: list[float] = []
    for s, n in zip(starts, lengths):
        out = _filter_segment(y[s:s + n], h, Q)
        if out is None:
            return -math.inf
        terms.extend(out[4])
    return math.fsum(terms)


def _pinv_flag(P_pred: np.ndarray) -> tuple[np.ndarray, bool]:
    d = np.linalg.eigvalsh(P_pred)
    singular = bool(d.min() <= _SINGULAR_RTOL * max(d.max(), 1.0))
    return np.linalg.pinv(P_pred, rcond=_SINGULAR_RTOL, hermitian=True), singular


def smooth(y, starts, lengths, rho: float, s2: float):
    """Fixed-interval smoother.

    Returns
    -------
    xi, eps, eps_lag : ndarray
        Elements 1, 2 and 3 of the smoothed state at every measurement.
    n_flagged : int
        Number of backward steps that needed a pseudo-inverse.
    """
    y = np.asarray(y, dtype=float)
    h, Q = _system(rho, s2)
    out = np.zeros((len(y), 3))
    flagged = 0
    for s, n in zip(starts, lengths):
        res = _filter_segment(y[s:s + n], h, Q)
        if res is None:
            raise FloatingPointError("non-positive innovation variance in smoother")
        pi_f, P_f, pi_p, P_p, _ = res
        pi_s = np.zeros((n, 3))
        pi_s[n - 1] = pi_f[n - 1]
        for t in range(n - 2, -1, -1):
            inv, singular = _pinv_flag(P_p[t + 1])
            flagged += singular
            C = P_f[t] @ F.T @ inv
            pi_s[t] = pi_f[t] + C @ (pi_s[t + 1] - pi_p[t + 1])
        out[s:s + n] = pi_s
    return out[:, 0].copy(), out[:, 1].copy(), out[:, 2].copy(), int(flagged)
