"""Posterior sampling for the full-posterior-observation (FPO) detector.

Observations are probability vectors ``z~`` on the simplex, modelled as
``Dir(eta * lam)`` with ``eta ~ Ga(kappa, nu)`` (shape, rate) and
``lam ~ Dir(beta)``.  The run posterior over ``(eta, lam)`` has no closed
form, so it is sampled with Gibbs-within-Metropolis-Hastings:

* ``eta | lam``: Metropolis-Hastings with a gamma proposal centred on the
  current value, shape adapted during burn-in towards 0.44 acceptance;
* ``lam | eta``: random walk on unnormalised log-weights ``u``
  (``lam = softmax(u)``, ``exp(u_k) ~ Ga(beta_k, 1)``), which carries the
  change-of-variables correction and targets 0.3 acceptance.

The chain itself runs in the compiled ``_core`` extension when available
and in ``_pycore`` otherwise.  Set ``CIRCADIAN_CPD_PURE_PYTHON=1`` to force
the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _pycore
from .errors import SamplerStuck

if os.environ.get("CIRCADIAN_CPD_PURE_PYTHON"):
    _ext = None
else:
    try:
        from . import _core as _ext
    except ImportError:  # extension not built
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
MIN_ACCEPTANCE = 1e-3
SIMPLEX_EPS = 1e-8


def get_run_chain(backend: str | None = None):
    """Chain kernel for ``backend`` (``"cython"`` or ``"python"``; default: active)."""
    backend = backend or BACKEND
    if backend == "cython":
        if _ext is None:
            raise RuntimeError("compiled extension circadian_cpd._core is not available")
        return _ext.run_chain
    if backend == "python":
        return _pycore.run_chain
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class FpoPriors:
    kappa: float = 1.0
    nu: float = 1.0
    beta: tuple | None = None

    def __post_init__(self):
        if not (self.kappa > 0 and self.nu > 0):
            raise ValueError("kappa and nu must be positive")
        if self.beta is not None:
            beta = tuple(float(b) for b in self.beta)
            if any(b <= 0 for b in beta) or abs(sum(beta) - 1.0) > 1e-9:
                raise ValueError("beta must be a strictly positive simplex vector")
            object.__setattr__(self, "beta", beta)

    def beta_for(self, n_classes: int) -> np.ndarray:
        if self.beta is None:
            return np.full(n_classes, 1.0 / n_classes)
        if len(self.beta) != n_classes:
            raise ValueError(f"beta has {len(self.beta)} entries, data has K={n_classes}")
        return np.asarray(self.beta)


@dataclass
class ChainResult:
    eta: np.ndarray
    lam: np.ndarray
    accept_eta: float
    accept_lam: float


def clamp_simplex(z, eps: float = SIMPLEX_EPS) -> np.ndarray:
    """Push probability vectors into the open simplex and renormalise."""
    z = np.clip(np.asarray(z, dtype=float), eps, None)
    return z / z.sum(axis=-1, keepdims=True)


def _initial_state(n_obs: int, sum_logz: np.ndarray, beta: np.ndarray, priors: FpoPriors):
    if n_obs > 0:
        lam0 = np.exp(sum_logz / n_obs - np.max(sum_logz / n_obs))
        lam0 /= lam0.sum()
    else:
        lam0 = beta / beta.sum()
    u0 = np.log(lam0 * beta.sum())
    return priors.kappa / priors.nu, u0


def chain_from_stats(n_obs: int, sum_logz, priors: FpoPriors, n_samples: int, burn_in: int, bitgen,
                     backend: str | None = None, check: bool = True) -> ChainResult:
    """Run one chain for a run summarised by ``(n_obs, sum_logz)``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    sum_logz = np.asarray(sum_logz, dtype=float)
    beta = priors.beta_for(sum_logz.size)
    eta0, u0 = _initial_state(n_obs, sum_logz, beta, priors)
    run_chain = get_run_chain(backend)
    eta, lam, acc_eta, acc_lam = run_chain(
        bitgen, int(n_obs), sum_logz, beta, float(priors.kappa), float(priors.nu),
        int(n_samples), int(burn_in), float(eta0), u0,
    )
    if check and min(acc_eta, acc_lam) < MIN_ACCEPTANCE:
        raise SamplerStuck(f"acceptance rates eta={acc_eta:.2g}, lambda={acc_lam:.2g} below {MIN_ACCEPTANCE}")
    return ChainResult(eta=eta, lam=lam, accept_eta=acc_eta, accept_lam=acc_lam)


def _as_bitgen(seed):
    if isinstance(seed, np.random.BitGenerator):
        return seed
    if isinstance(seed, np.random.Generator):
        return seed.bit_generator
    return np.random.PCG64(seed)


def gibbs_within_mh(partition, priors: FpoPriors, n_samples: int, burn_in: int, seed,
                    n_classes: int | None = None, backend: str | None = None) -> ChainResult:
    """Sample ``(eta, lam)`` from the posterior given the run's vectors.

    ``partition`` is an ``r x K`` array of probability vectors strictly
    inside the simplex (it may have zero rows, then ``n_classes`` is
    required and the chain targets the prior).
    """
    partition = np.asarray(partition, dtype=float)
    if partition.ndim != 2 or partition.shape[0] == 0:
        if n_classes is None:
            raise ValueError("n_classes is required for an empty partition")
        partition = np.zeros((0, n_classes))
    if np.any(partition <= 0):
        raise ValueError("partition vectors must lie strictly inside the simplex")
    sum_logz = np.log(partition).sum(axis=0)
    return chain_from_stats(partition.shape[0], sum_logz, priors, n_samples, burn_in, _as_bitgen(seed), backend)


def log_dirichlet_density(z, eta, lam) -> np.ndarray:
    """``log Dir(z | eta * lam)`` vectorised over samples."""
    alpha = np.asarray(eta)[:, None] * np.asarray(lam)
    logz = np.log(np.asarray(z, dtype=float))
    return gammaln(alpha.sum(axis=1)) - gammaln(alpha).sum(axis=1) + ((alpha - 1.0) * logz).sum(axis=1)


def log_predictive_from_chain(chain: ChainResult, z_new) -> float:
    dens = log_dirichlet_density(z_new, chain.eta, chain.lam)
    return float(logsumexp(dens) - np.log(dens.size))


def fpo_predictive(partition, z_new, priors: FpoPriors, n_samples: int, seed, burn_in: int = 200,
                   backend: str | None = None) -> float:
    """Monte Carlo estimate of the predictive density of ``z_new`` given the run."""
    return float(np.exp(fpo_log_predictive(partition, z_new, priors, n_samples, seed, burn_in, backend)))


def fpo_log_predictive(partition, z_new, priors: FpoPriors, n_samples: int, seed, burn_in: int = 200,
                       backend: str | None = None) -> float:
    z_new = np.asarray(z_new, dtype=float)
    if z_new.size == 1:
        return 0.0
    chain = gibbs_within_mh(partition, priors, n_samples, burn_in, seed, n_classes=z_new.size, backend=backend)
    return log_predictive_from_chain(chain, z_new)
