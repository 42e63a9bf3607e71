"""Brute-force reference for the hierarchical run-length joint on tiny instances.

The model: a constant-hazard change process splits the sequence into runs;
each run draws class probabilities ``theta`` from a prior given on a finite
grid; each step draws ``z_t ~ Cat(theta)`` and emits ``x_t`` with
probability ``emissions[t, z_t]``.  Everything is summed exhaustively, in
plain probability space, so it only scales to ``K**T <= 1e6``.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import roots_jacobi

from .detector import HazardConfig
from .errors import InstanceTooLarge

MAX_PATHS = 10**6


def dirichlet_grid(gamma, n_nodes: int):
    """Quadrature grid ``(theta[G, K], weights[G])`` for ``Dir(gamma)``.

    Stick-breaking with a Gauss-Jacobi rule per stick, so expectations of
    monomials ``prod_k theta_k**n_k`` are exact whenever ``sum n_k <=
    2 * n_nodes - 1``.
    """
    gamma = np.asarray(gamma, dtype=float)
    K = gamma.size
    if K == 1:
        return np.ones((1, 1)), np.ones(1)
    sticks = []
    for j in range(K - 1):
        a, b = gamma[j], gamma[j + 1:].sum()
        x, w = roots_jacobi(n_nodes, b - 1.0, a - 1.0)
        sticks.append(((1.0 + x) / 2.0, w / w.sum()))
    thetas, weights = [], []
    for combo in itertools.product(*[range(n_nodes)] * (K - 1)):
        remaining, weight = 1.0, 1.0
        theta = np.empty(K)
        for j, i in enumerate(combo):
            v, w = sticks[j][0][i], sticks[j][1][i]
            theta[j] = remaining * v
            remaining *= 1.0 - v
            weight *= w
        theta[K - 1] = remaining
        thetas.append(theta)
        weights.append(weight)
    return np.array(thetas), np.array(weights)


def _check_size(emissions: np.ndarray):
    T, K = emissions.shape
    if float(K) ** T > MAX_PATHS:
        raise InstanceTooLarge(f"K**T = {K}**{T} exceeds {MAX_PATHS}")


def _segments(cps: tuple, t: int):
    """Runs implied by change indicators ``cps[s] = 1`` (a new run begins after step s+1)."""
    bounds, start = [], 0
    for s in range(t):
        if cps[s]:
            bounds.append((start, s + 1))
            start = s + 1
    bounds.append((start, t))
    return bounds


def _prior_weight(cps: tuple, cfg: HazardConfig) -> float:
    p = 1.0 / cfg.tau
    n_change = sum(cps)
    return p**n_change * (1.0 - p) ** (len(cps) - n_change)


def exact_hierarchical_marginal(emissions, theta_grid, weights, cfg: HazardConfig | None = None) -> list:
    """``log p(r_t, x_{1:t})`` for ``t = 1..T`` by enumerating latent paths.

    Outer sum over class paths ``z_{1:t}``, inner sum over change
    configurations; each run contributes ``sum_g w_g prod theta_g[z]``.
    """
    cfg = cfg or HazardConfig()
    emissions = np.asarray(emissions, dtype=float)
    theta_grid = np.asarray(theta_grid, dtype=float)
    weights = np.asarray(weights, dtype=float)
    _check_size(emissions)
    T, K = emissions.shape
    out = []
    for t in range(1, T + 1):
        joint = np.zeros(t + 1)
        configs = [(c, _prior_weight(c, cfg), _segments(c, t)) for c in itertools.product((0, 1), repeat=t)]
        for path in itertools.product(range(K), repeat=t):
            p_x = np.prod([emissions[s, path[s]] for s in range(t)])
            if p_x == 0.0:
                continue
            for cps, prior, segs in configs:
                seg_prob = 1.0
                for a, b in segs:
                    seg_prob *= weights @ np.prod(theta_grid[:, list(path[a:b])], axis=1)
                r = segs[-1][1] - segs[-1][0]
                joint[r] += prior * p_x * seg_prob
        with np.errstate(divide="ignore"):
            out.append(np.log(joint))
    return out


def factored_hierarchical_marginal(emissions, theta_grid, weights, cfg: HazardConfig | None = None) -> list:
    """Same quantity as :func:`exact_hierarchical_marginal`, summed in the other order.

    For each change configuration, each run factorises as
    ``sum_g w_g prod_s sum_k theta_g[k] emissions[s, k]``.
    """
    cfg = cfg or HazardConfig()
    emissions = np.asarray(emissions, dtype=float)
    theta_grid = np.asarray(theta_grid, dtype=float)
    weights = np.asarray(weights, dtype=float)
    _check_size(emissions)
    T = emissions.shape[0]
    mix = theta_grid @ emissions.T  # (G, T): p(x_s | theta_g)
    out = []
    for t in range(1, T + 1):
        joint = np.zeros(t + 1)
        for cps in itertools.product((0, 1), repeat=t):
            segs = _segments(cps, t)
            seg_prob = 1.0
            for a, b in segs:
                seg_prob *= weights @ np.prod(mix[:, a:b], axis=1)
            joint[segs[-1][1] - segs[-1][0]] += _prior_weight(cps, cfg) * seg_prob
        with np.errstate(divide="ignore"):
            out.append(np.log(joint))
    return out
