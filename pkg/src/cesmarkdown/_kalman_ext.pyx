# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Kalman filter and smoother for the Hicks-neutral state space.

Same contract as ``_kalman_py``.  The transition matrix only copies the
current measurement error into the lag slot, so the predicted covariance is
always ``diag(s2, 1, P_{t|t}[1, 1])`` and the smoother gain has a single
non-zero column.  The recursions below are the matrix recursions with those
zeros removed.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY

cnp.import_array()

cdef double SINGULAR_RTOL = 1e-14


def filter_loglik(const double[::1] y, const cnp.int64_t[::1] starts,
                  const cnp.int64_t[::1] lengths, double rho, double s2):
    cdef Py_ssize_t k, t, s, n
    cdef double pi1, p11, pp22, N, nu, term
    cdef double total = 0.0, comp = 0.0, tmp
    for k in range(starts.shape[0]):
        s = starts[k]
        n = lengths[k]
        pi1 = 0.0
        p11 = 1.0
        for t in range(s, s + n):
            pp22 = p11
            N = s2 + 1.0 + rho * rho * pp22
            if not N > 0.0:
                return -INFINITY
            nu = y[t] + rho * pi1
            term = -log(N) - nu * nu / N
            # Neumaier compensated summation
            tmp = total + term
            if abs(total) >= abs(term):
                comp += (total - tmp) + term
            else:
                comp += (term - tmp) + total
            total = tmp
            pi1 = nu / N
            p11 = 1.0 - 1.0 / N
    return total + comp


def smooth(const double[::1] y, const cnp.int64_t[::1] starts,
           const cnp.int64_t[::1] lengths, double rho, double s2):
    cdef Py_ssize_t m = y.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xi_arr = np.zeros(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] eps_arr = np.zeros(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lag_arr = np.zeros(m)
    # filtered state and the column P_{t|t}[:, 1]
    cdef double[:, ::1] pf = np.zeros((m, 3))
    cdef double[:, ::1] cf = np.zeros((m, 3))
    cdef double[::1] xi = xi_arr
    cdef double[::1] eps = eps_arr
    cdef double[::1] lag = lag_arr
    cdef Py_ssize_t k, t, s, n
    cdef double pi1, p11, pp22, N, nu, d, dmax, gain
    cdef double s0, s1, s2s
    cdef long flagged = 0
    for k in range(starts.shape[0]):
        s = starts[k]
        n = lengths[k]
        pi1 = 0.0
        p11 = 1.0
        for t in range(s, s + n):
            pp22 = p11
            N = s2 + 1.0 + rho * rho * pp22
            if not N > 0.0:
                raise FloatingPointError("non-positive innovation variance in smoother")
            nu = y[t] + rho * pi1
            pf[t, 0] = s2 * nu / N
            pf[t, 1] = nu / N
            pf[t, 2] = pi1 - rho * pp22 * nu / N
            cf[t, 0] = -s2 / N
            cf[t, 1] = 1.0 - 1.0 / N
            cf[t, 2] = rho * pp22 / N
            pi1 = pf[t, 1]
            p11 = cf[t, 1]
        t = s + n - 1
        s0 = pf[t, 0]
        s1 = pf[t, 1]
        s2s = pf[t, 2]
        xi[t] = s0
        eps[t] = s1
        lag[t] = s2s
        for t in range(s + n - 2, s - 1, -1):
            # predicted covariance at t+1 is diag(s2, 1, cf[t, 1])
            d = cf[t, 1]
            dmax = 1.0
            if s2 > dmax:
                dmax = s2
            if d > dmax:
                dmax = d
            if s2 <= SINGULAR_RTOL * dmax or d <= SINGULAR_RTOL * dmax:
                flagged += 1
            if d > SINGULAR_RTOL * dmax:
                # smoothed minus predicted lag slot; the prediction equals pf[t, 1]
                gain = (s2s - pf[t, 1]) / d
            else:
                gain = 0.0
            s0 = pf[t, 0] + cf[t, 0] * gain
            s1 = pf[t, 1] + cf[t, 1] * gain
            s2s = pf[t, 2] + cf[t, 2] * gain
            xi[t] = s0
            eps[t] = s1
            lag[t] = s2s
    return xi_arr, eps_arr, lag_arr, int(flagged)
