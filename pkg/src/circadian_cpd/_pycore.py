"""Pure-Python Gibbs-within-Metropolis-Hastings chain (fallback backend).

Mirrors ``_core.pyx`` statement for statement, including the order in which
random numbers are drawn from the bit generator, so both backends produce
the same chain up to floating-point rounding in ``lgamma``.

The run is summarised by ``n_obs`` and ``sum_logz[k] = sum_tau log z_tau,k``;
the Dirichlet log-likelihood of the run only depends on these.
"""

import math

import numpy as np

BATCH = 25
TARGET_ETA = 0.44
TARGET_LAM = 0.3


def _softmax(u, out):
    mx = max(u)
    total = 0.0
    for k in range(len(u)):
        out[k] = math.exp(u[k] - mx)
        total += out[k]
    for k in range(len(u)):
        out[k] /= total


def _loglik(eta, lam, n_obs, sum_logz):
    if not eta > 0.0:
        return -math.inf
    acc = 0.0
    lin = 0.0
    for k in range(len(lam)):
        a = eta * lam[k]
        if not a > 0.0:
            return -math.inf
        acc += math.lgamma(a)
        lin += lam[k] * sum_logz[k]
    return n_obs * (math.lgamma(eta) - acc) + eta * lin


def _prior_u(u, beta):
    acc = 0.0
    for k in range(len(u)):
        acc += beta[k] * u[k] - math.exp(u[k])
    return acc


def run_chain(bitgen, n_obs, sum_logz, beta, kappa, nu, n_samples, burn_in, eta0, u0):
    """Return ``(eta[S], lam[S, K], accept_eta, accept_lam)``.

    Acceptance rates are measured after burn-in; during burn-in both proposal
    scales adapt once per batch of 25 iterations.
    """
    rng = np.random.Generator(bitgen)
    sum_logz = [float(v) for v in sum_logz]
    beta = [float(v) for v in beta]
    K = len(beta)
    u = [float(v) for v in u0]
    u_prop = [0.0] * K
    lam = [0.0] * K
    lam_prop = [0.0] * K
    _softmax(u, lam)
    eta = float(eta0)

    eta_out = np.empty(n_samples)
    lam_out = np.empty((n_samples, K))

    h_eta = 1.0 / math.sqrt(1.0 + n_obs)
    s_lam = 1.0 / math.sqrt(1.0 + n_obs)
    ll = _loglik(eta, lam, n_obs, sum_logz)
    pu = _prior_u(u, beta)

    acc_eta = acc_lam = 0
    batch_eta = batch_lam = 0
    for it in range(burn_in + n_samples):
        # eta | lambda: gamma random walk with mean eta and shape m
        m = 1.0 / (h_eta * h_eta)
        g = rng.standard_gamma(m)
        eta_p = eta * g / m
        ll_p = _loglik(eta_p, lam, n_obs, sum_logz)
        uni = rng.random()
        if ll_p > -math.inf:
            log_r = ((kappa - 1.0) * math.log(eta_p) - nu * eta_p + ll_p) - (
                (kappa - 1.0) * math.log(eta) - nu * eta + ll
            )
            log_r += (2.0 * m - 1.0) * (math.log(eta) - math.log(eta_p)) - m * (eta / eta_p - eta_p / eta)
            if log_r >= 0.0 or uni < math.exp(log_r):
                eta, ll = eta_p, ll_p
                batch_eta += 1
                if it >= burn_in:
                    acc_eta += 1

        # lambda | eta: random walk on unnormalised log-weights
        for k in range(K):
            u_prop[k] = u[k] + s_lam * rng.standard_normal()
        _softmax(u_prop, lam_prop)
        ll_p = _loglik(eta, lam_prop, n_obs, sum_logz)
        pu_p = _prior_u(u_prop, beta)
        uni = rng.random()
        if ll_p > -math.inf and pu_p > -math.inf:
            log_r = pu_p - pu + ll_p - ll
            if log_r >= 0.0 or uni < math.exp(log_r):
                u, u_prop = u_prop, u
                lam, lam_prop = lam_prop, lam
                ll, pu = ll_p, pu_p
                batch_lam += 1
                if it >= burn_in:
                    acc_lam += 1

        if it < burn_in and (it + 1) % BATCH == 0:
            h_eta *= math.exp(batch_eta / BATCH - TARGET_ETA)
            h_eta = min(max(h_eta, 1e-4), 1.0)
            s_lam *= math.exp(batch_lam / BATCH - TARGET_LAM)
            s_lam = min(max(s_lam, 1e-4), 10.0)
            batch_eta = batch_lam = 0
        if it >= burn_in:
            j = it - burn_in
            eta_out[j] = eta
            for k in range(K):
                lam_out[j, k] = lam[k]
    return eta_out, lam_out, acc_eta / n_samples, acc_lam / n_samples
