"""Heterogeneous Gaussian-Bernoulli circadian mixture fitted by EM.

Each period (a day) is one observation with ``D`` real entries and ``D``
binary entries; any entry may be missing.  Class ``k`` explains the real
part with ``N(0, K_k + diag(sigma**2))`` and the binary part with
independent Bernoulli means ``mu_k``.

The E-step integrates over missing real entries with the Gaussian
conditional given the observed ones and fills missing binary entries with
their current Bernoulli mean.  The M-step has a closed form for the weights
and Bernoulli means; kernel and noise hyperparameters are updated jointly by
conjugate-gradient ascent on the expected complete log-likelihood ``Q``.

The expected quadratic term is ``-1/2 tr(Sigma^-1 (x~ x~^T + A))`` where
``A`` holds the conditional covariance of the missing block.  This is the
sign that makes EM monotone; it is the one used here.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import logsumexp, xlogy

from .errors import (
    AllRunsFailed,
    DegenerateResponsibility,
    EmptyClassWarning,
    NotPositiveDefinite,
    NumericalError,
)
from .kernel import (
    KernelHyperparams,
    NoiseModel,
    build_covariance,
    cholesky_with_jitter,
    default_times,
    kernel_matrix,
    kernel_matrix_gradients,
)

logger = logging.getLogger(__name__)

EPS_PROB = 1e-6
EPS_WEIGHT = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class HeteroObservation:
    """One period: real and binary vectors with independent missing masks."""

    real_values: np.ndarray
    real_missing: np.ndarray
    bin_values: np.ndarray
    bin_missing: np.ndarray

    def __post_init__(self):
        self.real_values = np.asarray(self.real_values, dtype=float).reshape(-1)
        self.real_missing = np.asarray(self.real_missing, dtype=bool).reshape(-1)
        self.bin_values = np.asarray(self.bin_values, dtype=float).reshape(-1)
        self.bin_missing = np.asarray(self.bin_missing, dtype=bool).reshape(-1)
        sizes = {a.size for a in (self.real_values, self.real_missing, self.bin_values, self.bin_missing)}
        if len(sizes) != 1:
            raise ValueError("value vectors and masks must share one length")
        observed_bins = self.bin_values[~self.bin_missing]
        if not np.all((observed_bins == 0) | (observed_bins == 1)):
            raise ValueError("binary entries must be 0 or 1")

    @property
    def dim(self) -> int:
        return self.real_values.size

    @property
    def fully_missing(self) -> bool:
        return bool(self.real_missing.all() and self.bin_missing.all())


class ObservationBatch:
    """Stacked ``T x D`` view of a sequence of observations.

    Values at missing positions are zeroed so they never leak into sums.
    """

    def __init__(self, real, real_missing, bins, bin_missing):
        real_missing = np.asarray(real_missing, dtype=bool)
        bin_missing = np.asarray(bin_missing, dtype=bool)
        real = np.where(real_missing, 0.0, np.asarray(real, dtype=float))
        bins = np.where(bin_missing, 0.0, np.asarray(bins, dtype=float))
        if real.ndim != 2 or real.shape != bins.shape or real.shape != real_missing.shape:
            raise ValueError("batch arrays must all be T x D")
        if not np.all(np.isfinite(real)):
            raise ValueError("observed real entries must be finite")
        if not np.all((bins == 0) | (bins == 1)):
            raise ValueError("binary entries must be 0 or 1")
        self.real = real
        self.real_missing = real_missing
        self.bins = bins
        self.bin_missing = bin_missing

    @classmethod
    def from_observations(cls, observations: Sequence[HeteroObservation]) -> "ObservationBatch":
        if len(observations) == 0:
            raise ValueError("empty observation sequence")
        return cls(
            np.stack([o.real_values for o in observations]),
            np.stack([o.real_missing for o in observations]),
            np.stack([o.bin_values for o in observations]),
            np.stack([o.bin_missing for o in observations]),
        )

    def __len__(self):
        return self.real.shape[0]

    def __getitem__(self, t) -> HeteroObservation:
        return HeteroObservation(self.real[t], self.real_missing[t], self.bins[t], self.bin_missing[t])

    def __iter__(self):
        return (self[t] for t in range(len(self)))

    @property
    def dim(self) -> int:
        return self.real.shape[1]

    @property
    def fully_missing(self) -> np.ndarray:
        return self.real_missing.all(axis=1) & self.bin_missing.all(axis=1)

    def take(self, rows) -> "ObservationBatch":
        return ObservationBatch(self.real[rows], self.real_missing[rows], self.bins[rows], self.bin_missing[rows])


def as_batch(data) -> ObservationBatch:
    if isinstance(data, ObservationBatch):
        return data
    if isinstance(data, HeteroObservation):
        return ObservationBatch.from_observations([data])
    return ObservationBatch.from_observations(list(data))


@dataclass
class MixtureParams:
    weights: np.ndarray
    bern_means: np.ndarray
    kernel_hp: tuple
    noise: NoiseModel

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.bern_means = np.clip(np.atleast_2d(np.asarray(self.bern_means, dtype=float)), EPS_PROB, 1 - EPS_PROB)
        self.kernel_hp = tuple(self.kernel_hp)
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must lie on the simplex")
        K, D = self.bern_means.shape
        if self.weights.size != K or len(self.kernel_hp) != K:
            raise ValueError("weights, bern_means and kernel_hp disagree on K")
        if len(self.noise) != D or any(hp.period != D for hp in self.kernel_hp):
            raise ValueError("noise length and kernel periods must equal D")
        if len({hp.order for hp in self.kernel_hp}) != 1:
            raise ValueError("all classes must share the Fourier order")

    @property
    def n_classes(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.bern_means.shape[1]

    @property
    def order(self) -> int:
        return self.kernel_hp[0].order

    def covariances(self):
        return [build_covariance(hp, self.noise) for hp in self.kernel_hp]

    def permuted(self, perm) -> "MixtureParams":
        perm = list(perm)
        return MixtureParams(
            self.weights[perm], self.bern_means[perm], tuple(self.kernel_hp[i] for i in perm), self.noise
        )

    def __eq__(self, other):
        if not isinstance(other, MixtureParams):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bern_means, other.bern_means)
            and self.kernel_hp == other.kernel_hp
            and self.noise == other.noise
        )


@dataclass
class LatentPosterior:
    """Row-stochastic ``T x K`` class probabilities; fully-missing rows are uniform."""

    probs: np.ndarray
    fully_missing: np.ndarray

    def map_labels(self) -> np.ndarray:
        """MAP class per row, ``-1`` where the whole observation is missing."""
        labels = np.argmax(self.probs, axis=1)
        return np.where(self.fully_missing, -1, labels)

    def effective(self) -> np.ndarray:
        """Responsibilities with fully-missing rows zeroed out."""
        return self.probs * (~self.fully_missing)[:, None]


@dataclass
class PatternGroup:
    rows: np.ndarray
    missing_idx: np.ndarray
    cond_cov: np.ndarray  # (K, m, m)


@dataclass
class MissingStats:
    """Completed real vectors and conditional covariances per class.

    ``x_tilde[t, k]`` is the real vector of row ``t`` with missing entries
    replaced by their conditional mean under class ``k``.  Rows sharing a
    missing pattern share the conditional covariance.
    """

    x_tilde: np.ndarray
    groups: list

    def second_moments(self, resp: np.ndarray):
        """Return ``S_k = sum_t r_tk E[x x^T | k]`` and ``N_k = sum_t r_tk``."""
        S = np.einsum("tk,tki,tkj->kij", resp, self.x_tilde, self.x_tilde)
        for grp in self.groups:
            if grp.missing_idx.size == 0:
                continue
            w = resp[grp.rows].sum(axis=0)
            ix = np.ix_(grp.missing_idx, grp.missing_idx)
            for k in range(resp.shape[1]):
                S[k][ix] += w[k] * grp.cond_cov[k]
        return S, resp.sum(axis=0)


@dataclass
class EStepResult:
    posterior: LatentPosterior
    missing_stats: MissingStats
    log_joint: np.ndarray
    loglik: float
    params: MixtureParams


def _pattern_block(sigma: np.ndarray, x_obs: np.ndarray, observed: np.ndarray):
    """Marginal log-density of observed entries plus missing-block conditionals.

    ``x_obs`` is ``n x |o|``.  Returns ``(loglik[n], cond_mean[n, |m|], cond_cov[|m|, |m|])``.
    """
    missing = ~observed
    n = x_obs.shape[0]
    n_o = int(observed.sum())
    if n_o == 0:
        return np.zeros(n), np.zeros((n, int(missing.sum()))), sigma[np.ix_(missing, missing)].copy()
    s_oo = sigma[np.ix_(observed, observed)]
    chol, _ = cholesky_with_jitter(s_oo)
    # row-wise einsum keeps every row's arithmetic independent of how many
    # rows share the pattern, so grouped and per-row paths agree bitwise
    chol_inv = solve_triangular(chol, np.eye(n_o), lower=True)
    alpha = np.einsum("ij,nj->ni", chol_inv, x_obs)
    quad = np.sum(alpha**2, axis=1)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    loglik = -0.5 * (n_o * LOG_2PI + logdet + quad)
    if not missing.any():
        return loglik, np.zeros((n, 0)), np.zeros((0, 0))
    weights = cho_solve((chol, True), sigma[np.ix_(observed, missing)])
    cond_mean = np.einsum("nj,jm->nm", x_obs, weights)
    cond_cov = sigma[np.ix_(missing, missing)] - sigma[np.ix_(missing, observed)] @ weights
    return loglik, cond_mean, 0.5 * (cond_cov + cond_cov.T)


def gaussian_marginal_loglik(obs: HeteroObservation, k: int, params: MixtureParams, cov=None) -> float:
    """``log N(x_o | 0, Sigma_k^{oo})`` over the observed real entries (0 if none)."""
    observed = ~obs.real_missing
    if not observed.any():
        return 0.0
    if cov is None:
        cov = build_covariance(params.kernel_hp[k], params.noise)
    ll, _, _ = _pattern_block(cov.values, obs.real_values[observed][None, :], observed)
    return float(ll[0])


def bernoulli_loglik(obs: HeteroObservation, k: int, params: MixtureParams) -> float:
    mu = params.bern_means[k]
    observed = ~obs.bin_missing
    x = obs.bin_values[observed]
    return float(np.sum(x * np.log(mu[observed]) + (1 - x) * np.log1p(-mu[observed])))


def _bernoulli_table(batch: ObservationBatch, bern_means: np.ndarray) -> np.ndarray:
    observed = ~batch.bin_missing
    ones = batch.bins * observed
    zeros = (1 - batch.bins) * observed
    return ones @ np.log(bern_means).T + zeros @ np.log1p(-bern_means).T


def _pattern_groups(batch: ObservationBatch, rows: np.ndarray, group: bool):
    if not group:
        return [np.array([r]) for r in rows]
    buckets: dict[bytes, list] = {}
    for r in rows:
        buckets.setdefault(batch.real_missing[r].tobytes(), []).append(r)
    return [np.array(v) for v in buckets.values()]


def e_step(data, params: MixtureParams, group_patterns: bool = True) -> EStepResult:
    """Responsibilities and missing-value expectations under ``params``.

    With ``group_patterns=False`` every row goes through the missing-data
    path on its own; results are identical, only slower.
    """
    batch = as_batch(data)
    T, D = batch.real.shape
    K = params.n_classes
    if D != params.dim:
        raise ValueError(f"data has D={D}, model has D={params.dim}")
    covs = params.covariances()
    active = ~batch.fully_missing
    active_rows = np.flatnonzero(active)

    log_gauss = np.zeros((T, K))
    x_tilde = np.repeat(batch.real[:, None, :], K, axis=1)
    groups = []
    for rows in _pattern_groups(batch, active_rows, group_patterns):
        observed = ~batch.real_missing[rows[0]]
        missing_idx = np.flatnonzero(~observed)
        x_obs = batch.real[np.ix_(rows, np.flatnonzero(observed))]
        cond_covs = np.zeros((K, missing_idx.size, missing_idx.size))
        for k in range(K):
            ll, cmean, ccov = _pattern_block(covs[k].values, x_obs, observed)
            log_gauss[rows, k] = ll
            if missing_idx.size:
                x_tilde[np.ix_(rows, [k], missing_idx)] = cmean[:, None, :]
                cond_covs[k] = ccov
        groups.append(PatternGroup(rows=rows, missing_idx=missing_idx, cond_cov=cond_covs))

    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    log_joint = log_w[None, :] + log_gauss + _bernoulli_table(batch, params.bern_means)
    probs = np.full((T, K), 1.0 / K)
    loglik = 0.0
    if active_rows.size:
        lj = log_joint[active_rows]
        if not np.all(np.isfinite(np.max(lj, axis=1))):
            raise DegenerateResponsibility("every class has zero density for some observation")
        norm = logsumexp(lj, axis=1)
        probs[active_rows] = np.exp(lj - norm[:, None])
        loglik = float(np.sum(norm))
    posterior = LatentPosterior(probs=probs, fully_missing=~active)
    return EStepResult(
        posterior=posterior,
        missing_stats=MissingStats(x_tilde=x_tilde, groups=groups),
        log_joint=log_joint,
        loglik=loglik,
        params=params,
    )


def observed_loglik(data, params: MixtureParams) -> float:
    """Observed-data log-likelihood, the quantity EM never decreases."""
    return e_step(data, params).loglik


# -- parameter packing for the continuous M-step --------------------------------


def pack_hyperparams(kernel_hp, noise: NoiseModel) -> np.ndarray:
    """Flatten to ``[a, b, log sigma_a, log ell] * K + log sigma``."""
    parts = []
    for hp in kernel_hp:
        parts.extend([hp.a, hp.b, [math.log(hp.sigma_a), math.log(hp.ell)]])
    parts.append(np.log(noise.sigma))
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def unpack_hyperparams(theta: np.ndarray, n_classes: int, order: int, period: int):
    theta = np.asarray(theta, dtype=float)
    per = 2 * order + 3
    hps = []
    for k in range(n_classes):
        block = theta[k * per : (k + 1) * per]
        hps.append(
            KernelHyperparams(
                a=block[: order + 1],
                b=block[order + 1 : 2 * order + 1],
                sigma_a=math.exp(block[-2]),
                ell=math.exp(block[-1]),
                period=period,
            )
        )
    noise = NoiseModel(np.exp(theta[n_classes * per :]))
    return tuple(hps), noise


def gaussian_q(theta, S, N, n_classes: int, order: int, period: int, with_grad: bool = True):
    """Gaussian part of ``Q`` and its gradient in packed coordinates.

    ``S`` and ``N`` come from :meth:`MissingStats.second_moments`.  Returns
    ``(-inf, None)`` when a covariance cannot be factorised.
    """
    try:
        hps, noise = unpack_hyperparams(theta, n_classes, order, period)
    except (ValueError, OverflowError):
        return -np.inf, None
    D = period
    per = 2 * order + 3
    var = noise.variances
    value = 0.0
    grad = np.zeros_like(np.asarray(theta, dtype=float)) if with_grad else None
    noise_grad = np.zeros(D)
    eye = np.eye(D)
    for k, hp in enumerate(hps):
        sigma = kernel_matrix(hp) + np.diag(var)
        if not np.all(np.isfinite(sigma)):
            return -np.inf, None
        try:
            chol, _ = cholesky_with_jitter(sigma)
        except NotPositiveDefinite:
            return -np.inf, None
        sigma_inv = cho_solve((chol, True), eye)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        value += -0.5 * N[k] * (D * LOG_2PI + logdet) - 0.5 * np.sum(sigma_inv * S[k])
        if with_grad:
            G = 0.5 * (sigma_inv @ S[k] @ sigma_inv - N[k] * sigma_inv)
            dK = kernel_matrix_gradients(hp)
            g = np.einsum("pij,ij->p", dK, G)
            g[-2] *= hp.sigma_a
            g[-1] *= hp.ell
            grad[k * per : (k + 1) * per] = g
            noise_grad += np.diag(G)
    if with_grad:
        grad[n_classes * per :] = 2.0 * var * noise_grad
    return float(value), grad


def _effective_resp(estep: EStepResult) -> np.ndarray:
    return estep.posterior.effective()


def expected_complete_loglik(data, estep: EStepResult, params: MixtureParams) -> float:
    """``Q(params | old)`` where ``estep`` was computed at the old parameters."""
    batch = as_batch(data)
    resp = _effective_resp(estep)
    S, N = estep.missing_stats.second_moments(resp)
    q_w = float(np.sum(xlogy(N, params.weights)))
    observed = ~batch.bin_missing
    mu_old = estep.params.bern_means
    log_mu, log_1m = np.log(params.bern_means), np.log1p(-params.bern_means)
    # observed part: sum_t r_tk [x log mu + (1 - x) log(1 - mu)]
    ones = resp.T @ (batch.bins * observed)
    zeros = resp.T @ ((1 - batch.bins) * observed)
    miss = resp.T @ (~observed).astype(float)
    q_b = np.sum(ones * log_mu + zeros * log_1m)
    q_b += np.sum(miss * (mu_old * log_mu + (1 - mu_old) * log_1m))
    theta = pack_hyperparams(params.kernel_hp, params.noise)
    q_g, _ = gaussian_q(theta, S, N, params.n_classes, params.order, params.dim, with_grad=False)
    return q_w + float(q_b) + q_g


@dataclass
class BernoulliUpdate:
    weights: np.ndarray
    bern_means: np.ndarray
    empty_classes: list


def m_step_bernoulli(data, posterior: LatentPosterior, current: MixtureParams) -> BernoulliUpdate:
    """Closed-form update of weights and Bernoulli means.

    Missing binary entries contribute their current mean.  A class whose
    total responsibility is below ``1e-8 * T`` keeps its previous means.
    """
    batch = as_batch(data)
    resp = posterior.effective()
    n_active = int((~posterior.fully_missing).sum())
    N = resp.sum(axis=0)
    observed = ~batch.bin_missing
    num = resp.T @ (batch.bins * observed) + (resp.T @ (~observed).astype(float)) * current.bern_means
    means = current.bern_means.copy()
    empty = [k for k in range(N.size) if N[k] < EPS_WEIGHT * max(n_active, 1)]
    for k in range(N.size):
        if k in empty:
            warnings.warn(f"class {k} is empty; keeping its previous Bernoulli means", EmptyClassWarning)
            continue
        means[k] = num[k] / N[k]
    weights = N / N.sum() if N.sum() > 0 else current.weights.copy()
    return BernoulliUpdate(weights=weights, bern_means=np.clip(means, EPS_PROB, 1 - EPS_PROB), empty_classes=empty)


class _BudgetExhausted(Exception):
    pass


class _BudgetedObjective:
    """Negated Q with an evaluation budget; remembers the best point seen."""

    def __init__(self, S, N, n_classes, order, period, budget):
        self.args = (S, N, n_classes, order, period)
        self.budget = budget
        self.n_evals = 0
        self.best_x = None
        self.best_q = -np.inf

    def __call__(self, theta):
        if self.n_evals >= self.budget:
            raise _BudgetExhausted
        self.n_evals += 1
        q, g = gaussian_q(theta, *self.args)
        if not np.isfinite(q):
            return np.inf, np.zeros_like(theta)
        if q > self.best_q:
            self.best_q, self.best_x = q, np.array(theta, copy=True)
        return -q, -g


@dataclass
class GaussianUpdate:
    kernel_hp: tuple
    noise: NoiseModel
    accepted: bool
    q_before: float
    q_after: float
    n_evals: int


def m_step_gaussian(data, posterior: LatentPosterior, missing_stats: MissingStats, current: MixtureParams,
                    budget: int = 10) -> GaussianUpdate:
    """Conjugate-gradient ascent on the Gaussian part of ``Q``.

    Positive hyperparameters are optimised on the log scale.  The step is
    kept only if it improves ``Q``; otherwise the current values stay.
    """
    resp = posterior.effective()
    S, N = missing_stats.second_moments(resp)
    K, C, D = current.n_classes, current.order, current.dim
    theta0 = pack_hyperparams(current.kernel_hp, current.noise)
    q0, _ = gaussian_q(theta0, S, N, K, C, D, with_grad=False)
    objective = _BudgetedObjective(S, N, K, C, D, budget)
    try:
        minimize(objective, theta0, jac=True, method="CG", options={"maxiter": budget, "gtol": 1e-10})
    except _BudgetExhausted:
        pass
    if objective.best_x is not None and objective.best_q > q0:
        hps, noise = unpack_hyperparams(objective.best_x, K, C, D)
        return GaussianUpdate(hps, noise, True, q0, objective.best_q, objective.n_evals)
    logger.debug("line search found no improvement; keeping hyperparameters")
    return GaussianUpdate(current.kernel_hp, current.noise, False, q0, q0, objective.n_evals)


# -- fitting ----------------------------------------------------------------------


@dataclass
class FitConfig:
    n_init: int = 5
    max_em_iters: int = 200
    eps_q: float = 250.0
    max_m_evals: int = 10
    seed: int = 0
    order: int = 3
    freeze_kernel: bool = False
    n_jobs: int = 1


@dataclass
class FitResult:
    params: MixtureParams
    posterior: LatentPosterior
    q_trace: np.ndarray
    n_iter: int
    converged: bool
    best_init: int
    final_q: list = field(default_factory=list)
    seed: int = 0


def init_params(rng: np.random.Generator, n_classes: int, dim: int, order: int) -> MixtureParams:
    """Random starting point: weights ~ Dir(50), means and noise ~ U(0, 1),
    sigma_a and ell ~ U(1, 2), Fourier coefficients ~ N(0, 1)."""
    weights = rng.dirichlet(np.full(n_classes, 50.0))
    means = rng.uniform(0.0, 1.0, size=(n_classes, dim))
    noise = NoiseModel(np.maximum(rng.uniform(0.0, 1.0, size=dim), 1e-3))
    hps = []
    for _ in range(n_classes):
        sigma_a, ell = rng.uniform(1.0, 2.0, size=2)
        hps.append(
            KernelHyperparams(
                a=rng.standard_normal(order + 1), b=rng.standard_normal(order), sigma_a=sigma_a, ell=ell, period=dim
            )
        )
    return MixtureParams(weights, means, tuple(hps), noise)


def _run_em(batch: ObservationBatch, params: MixtureParams, cfg: FitConfig):
    estep = e_step(batch, params)
    q_trace = [estep.loglik]
    converged = False
    n_iter = 0
    for n_iter in range(1, cfg.max_em_iters + 1):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyClassWarning)
            bern = m_step_bernoulli(batch, estep.posterior, params)
        kernel_hp, noise = params.kernel_hp, params.noise
        if not cfg.freeze_kernel:
            gauss = m_step_gaussian(batch, estep.posterior, estep.missing_stats, params, cfg.max_m_evals)
            kernel_hp, noise = gauss.kernel_hp, gauss.noise
        params = MixtureParams(bern.weights, bern.bern_means, kernel_hp, noise)
        estep = e_step(batch, params)
        q_trace.append(estep.loglik)
        if abs(q_trace[-1] - q_trace[-2]) < cfg.eps_q:
            converged = True
            break
    return params, estep, np.array(q_trace), n_iter, converged


def fit(data, n_classes: int, config: FitConfig | None = None) -> FitResult:
    """Multi-start EM; keeps the restart with the highest final objective.

    ``q_trace`` holds the observed-data log-likelihood after every EM
    iteration (entry 0 is the starting point).
    """
    cfg = config or FitConfig()
    batch = as_batch(data)
    n_active = int((~batch.fully_missing).sum())
    if n_active < n_classes:
        raise ValueError(f"need at least K={n_classes} non-missing observations, got {n_active}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_init)

    def one(i):
        rng = np.random.default_rng(seeds[i])
        try:
            start = init_params(rng, n_classes, batch.dim, cfg.order)
            return _run_em(batch, start, cfg)
        except NumericalError as exc:
            logger.warning("initialisation %d aborted: %s", i, exc)
            return None

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            runs = list(pool.map(one, range(cfg.n_init)))
    else:
        runs = [one(i) for i in range(cfg.n_init)]
    final_q = [r[2][-1] if r is not None else -np.inf for r in runs]
    if all(r is None for r in runs):
        raise AllRunsFailed(f"all {cfg.n_init} initialisations failed")
    best = int(np.argmax(final_q))
    params, estep, q_trace, n_iter, converged = runs[best]
    return FitResult(
        params=params,
        posterior=estep.posterior,
        q_trace=q_trace,
        n_iter=n_iter,
        converged=converged,
        best_init=best,
        final_q=[float(q) for q in final_q],
        seed=cfg.seed,
    )


def sample_synthetic(params: MixtureParams, z_sequence, seed) -> ObservationBatch:
    """Draw one observation per label: ``N(0, K_k + D)`` reals and Bernoulli bits."""
    z = np.asarray(z_sequence, dtype=int)
    K, D = params.n_classes, params.dim
    if np.any((z < 0) | (z >= K)):
        raise ValueError(f"labels must be in 0..{K - 1}")
    rng = np.random.default_rng(seed)
    chols = [build_covariance(hp, params.noise).cholesky_factor for hp in params.kernel_hp]
    normals = rng.standard_normal((z.size, D))
    uniforms = rng.random((z.size, D))
    real = np.empty((z.size, D))
    for k in range(K):
        rows = z == k
        real[rows] = normals[rows] @ chols[k].T
    bins = (uniforms < params.bern_means[z]).astype(float)
    no_missing = np.zeros((z.size, D), dtype=bool)
    return ObservationBatch(real, no_missing, bins, no_missing.copy())
