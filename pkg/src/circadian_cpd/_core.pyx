# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Gibbs-within-Metropolis-Hastings chain.

Same algorithm and draw order as ``_pycore.run_chain``; random numbers come
from numpy's C distribution functions on the caller's bit generator.
"""

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport exp, log, lgamma, sqrt, INFINITY
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_gamma, random_standard_normal

cdef int BATCH = 25
cdef double TARGET_ETA = 0.44
cdef double TARGET_LAM = 0.3


cdef inline void _softmax(double[::1] u, double[::1] out) noexcept nogil:
    cdef Py_ssize_t k, K = u.shape[0]
    cdef double mx = u[0], total = 0.0
    for k in range(1, K):
        if u[k] > mx:
            mx = u[k]
    for k in range(K):
        out[k] = exp(u[k] - mx)
        total += out[k]
    for k in range(K):
        out[k] /= total


cdef inline double _loglik(double eta, double[::1] lam, double n_obs,
                           double[::1] sum_logz) noexcept nogil:
    cdef Py_ssize_t k
    cdef double a, acc = 0.0, lin = 0.0
    if not eta > 0.0:
        return -INFINITY
    for k in range(lam.shape[0]):
        a = eta * lam[k]
        if not a > 0.0:
            return -INFINITY
        acc += lgamma(a)
        lin += lam[k] * sum_logz[k]
    return n_obs * (lgamma(eta) - acc) + eta * lin


cdef inline double _prior_u(double[::1] u, double[::1] beta) noexcept nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0
    for k in range(u.shape[0]):
        acc += beta[k] * u[k] - exp(u[k])
    return acc


def run_chain(bitgen, long n_obs, sum_logz, beta, double kappa, double nu,
              long n_samples, long burn_in, double eta0, u0):
    """Return ``(eta[S], lam[S, K], accept_eta, accept_lam)``."""
    cdef const char *name = "BitGenerator"
    capsule = bitgen.capsule
    if not PyCapsule_IsValid(capsule, name):
        raise ValueError("expected a numpy BitGenerator")
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(capsule, name)

    cdef double[::1] slz = np.ascontiguousarray(sum_logz, dtype=np.float64)
    cdef double[::1] bet = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t K = bet.shape[0]
    cdef double[::1] u = np.array(u0, dtype=np.float64)
    cdef double[::1] u_prop = np.zeros(K)
    cdef double[::1] lam = np.zeros(K)
    cdef double[::1] lam_prop = np.zeros(K)
    cdef double[::1] tmp
    eta_arr = np.empty(n_samples)
    lam_arr = np.empty((n_samples, K))
    cdef double[::1] eta_out = eta_arr
    cdef double[:, ::1] lam_out = lam_arr

    cdef double eta = eta0, eta_p, g, m, uni, log_r, ll, ll_p, pu, pu_p
    cdef double nobs = <double> n_obs
    cdef double h_eta = 1.0 / sqrt(1.0 + nobs)
    cdef double s_lam = 1.0 / sqrt(1.0 + nobs)
    cdef long it, j, acc_eta = 0, acc_lam = 0, batch_eta = 0, batch_lam = 0
    cdef Py_ssize_t k

    with bitgen.lock, nogil:
        _softmax(u, lam)
        ll = _loglik(eta, lam, nobs, slz)
        pu = _prior_u(u, bet)
        for it in range(burn_in + n_samples):
            m = 1.0 / (h_eta * h_eta)
            g = random_standard_gamma(rng, m)
            eta_p = eta * g / m
            ll_p = _loglik(eta_p, lam, nobs, slz)
            uni = rng.next_double(rng.state)
            if ll_p > -INFINITY:
                log_r = ((kappa - 1.0) * log(eta_p) - nu * eta_p + ll_p) - (
                    (kappa - 1.0) * log(eta) - nu * eta + ll)
                log_r += (2.0 * m - 1.0) * (log(eta) - log(eta_p)) - m * (eta / eta_p - eta_p / eta)
                if log_r >= 0.0 or uni < exp(log_r):
                    eta = eta_p
                    ll = ll_p
                    batch_eta += 1
                    if it >= burn_in:
                        acc_eta += 1

            for k in range(K):
                u_prop[k] = u[k] + s_lam * random_standard_normal(rng)
            _softmax(u_prop, lam_prop)
            ll_p = _loglik(eta, lam_prop, nobs, slz)
            pu_p = _prior_u(u_prop, bet)
            uni = rng.next_double(rng.state)
            if ll_p > -INFINITY and pu_p > -INFINITY:
                log_r = pu_p - pu + ll_p - ll
                if log_r >= 0.0 or uni < exp(log_r):
                    tmp = u
                    u = u_prop
                    u_prop = tmp
                    tmp = lam
                    lam = lam_prop
                    lam_prop = tmp
                    ll = ll_p
                    pu = pu_p
                    batch_lam += 1
                    if it >= burn_in:
                        acc_lam += 1

            if it < burn_in and (it + 1) % BATCH == 0:
                h_eta *= exp(<double> batch_eta / BATCH - TARGET_ETA)
                h_eta = min(max(h_eta, 1e-4), 1.0)
                s_lam *= exp(<double> batch_lam / BATCH - TARGET_LAM)
                s_lam = min(max(s_lam, 1e-4), 10.0)
                batch_eta = 0
                batch_lam = 0
            if it >= burn_in:
                j = it - burn_in
                eta_out[j] = eta
                for k in range(K):
                    lam_out[j, k] = lam[k]
    return eta_arr, lam_arr, acc_eta / <double> n_samples, acc_lam / <double> n_samples
