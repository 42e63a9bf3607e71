"""Run-length posterior change-point detection over latent-class sequences.

Two observation models feed the same log-space recursion:

* PEO: one class label per step, Dirichlet-Categorical run model
  (closed-form predictive);
* FPO: one probability vector per step, ``Dir(eta * lam)`` run model with
  a Monte Carlo predictive from :mod:`circadian_cpd.sampler`.

Conventions.  ``r_t`` is the number of observations in the current run after
step ``t`` (1-based), so ``r_0 = 0`` and a change declared at ``t`` with MAP
run length ``r`` dates the last observation of the previous regime at
``t - r``.  Missing steps contribute a predictive of 1 and leave the run
statistics untouched.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from . import sampler
from .errors import NumericalUnderflow
from .sampler import FpoPriors

MISSING = -1
MIN_DROP = 5
DROP_FRACTION = 0.5


@dataclass(frozen=True)
class HazardConfig:
    tau: float = 100.0

    def __post_init__(self):
        if not self.tau > 1:
            raise ValueError(f"tau must be > 1, got {self.tau}")

    @property
    def log_change(self) -> float:
        return float(np.log(1.0 / self.tau))

    @property
    def log_grow(self) -> float:
        return float(np.log1p(-1.0 / self.tau))


class HazardProbs(NamedTuple):
    p_change: float
    p_grow: float


def hazard(r_prev: int, cfg: HazardConfig) -> HazardProbs:
    """Constant hazard: the previous run length is accepted but unused."""
    if r_prev < 0:
        raise ValueError("r_prev must be >= 0")
    p = 1.0 / cfg.tau
    return HazardProbs(p, 1.0 - p)


def peo_predictive(gamma, z_star: int) -> float:
    """Probability of class ``z_star`` (0-based) under ``Dir(gamma)``-``Cat``."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise ValueError("Dirichlet counts must be positive")
    return float(gamma[z_star] / gamma.sum())


def is_missing(value) -> bool:
    if value is None:
        return True
    if isinstance(value, (int, np.integer)):
        return value == MISSING
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return bool(np.isnan(arr) or arr == MISSING)
    return bool(np.any(np.isnan(arr)))


@dataclass
class RunLengthState:
    """Joint ``log p(r_t, obs_{1:t})`` over ``r = 0..t`` with per-run statistics.

    For PEO ``suffstats`` is a ``(t+1, K)`` array of Dirichlet counts; for
    FPO it is the vector of run start indices (run ``r`` covers steps
    ``start[r] .. t``).
    """

    step: int
    log_joint: np.ndarray
    suffstats: np.ndarray

    @property
    def log_evidence(self) -> float:
        return float(logsumexp(self.log_joint))

    def posterior(self) -> np.ndarray:
        return np.exp(self.log_joint - logsumexp(self.log_joint))


@dataclass
class CpReport:
    runlength_map: np.ndarray
    posterior: np.ndarray
    detected_cps: list = field(default_factory=list)
    log_evidence: float = 0.0

    @property
    def n_steps(self) -> int:
        return int(self.runlength_map.size)

    def estimated_cp_times(self) -> list:
        return [cp for _, cp in self.detected_cps]


def _advance(log_joint: np.ndarray, log_pred: np.ndarray, cfg: HazardConfig, step: int) -> np.ndarray:
    weighted = log_joint + log_pred
    new = np.empty(log_joint.size + 1)
    new[0] = logsumexp(weighted) + cfg.log_change
    new[1:] = weighted + cfg.log_grow
    if not np.isfinite(logsumexp(new)):
        raise NumericalUnderflow(f"observation at step {step} has zero probability under every run length")
    return new


def _prune(log_joint: np.ndarray, threshold: float | None) -> np.ndarray:
    if not threshold:
        return log_joint
    log_post = log_joint - logsumexp(log_joint)
    out = log_joint.copy()
    out[log_post < np.log(threshold)] = -np.inf
    return out


def peo_init(prior_gamma) -> RunLengthState:
    prior_gamma = np.asarray(prior_gamma, dtype=float)
    if prior_gamma.ndim != 1 or np.any(prior_gamma <= 0):
        raise ValueError("prior_gamma must be a positive vector")
    return RunLengthState(step=0, log_joint=np.zeros(1), suffstats=prior_gamma[None, :].copy())


def peo_step(state: RunLengthState, z_star, cfg: HazardConfig, prior_gamma,
             prune_threshold: float | None = None) -> RunLengthState:
    """One PEO update; ``z_star`` is a 0-based label, ``MISSING`` or ``None``."""
    prior_gamma = np.asarray(prior_gamma, dtype=float)
    counts = state.suffstats
    if is_missing(z_star):
        log_pred = np.zeros(counts.shape[0])
        grown = counts
    else:
        z = int(z_star)
        if not 0 <= z < counts.shape[1]:
            raise ValueError(f"label {z} outside 0..{counts.shape[1] - 1}")
        log_pred = np.log(counts[:, z]) - np.log(counts.sum(axis=1))
        grown = counts.copy()
        grown[:, z] += 1.0
    log_joint = _advance(state.log_joint, log_pred, cfg, state.step + 1)
    return RunLengthState(
        step=state.step + 1,
        log_joint=_prune(log_joint, prune_threshold),
        suffstats=np.vstack([prior_gamma[None, :], grown]),
    )


def true_run_lengths(n_steps: int, cps) -> np.ndarray:
    """Run length after each step when runs end at the 1-based steps in ``cps``."""
    r = np.empty(n_steps, dtype=int)
    start, bounds = 0, {int(c) for c in cps}
    for i in range(n_steps):
        r[i] = i + 1 - start
        if i + 1 in bounds:
            start = i + 1
    return r


def detect_change_points(runlength_map, min_drop: int = MIN_DROP, fraction: float = DROP_FRACTION) -> list:
    """Change points from drops in the MAP run-length trace.

    A drop at ``t`` qualifies when ``r*_t < r*_{t-1} - max(min_drop,
    fraction * r*_{t-1})``; its change time is ``t - r*_t``.  When a later
    drop dates its change at or before the time the previous drop was seen,
    both describe the same change and the later, better-informed estimate
    replaces the earlier one.
    """
    rmap = np.asarray(runlength_map, dtype=int)
    found = []
    for i in range(1, rmap.size):
        prev = rmap[i - 1]
        if rmap[i] < prev - max(min_drop, fraction * prev):
            t = i + 1
            cp = t - int(rmap[i])
            if found and cp <= found[-1][0]:
                found[-1] = (t, cp)
            else:
                found.append((t, cp))
    return found


def _report(log_joints: list, n_steps: int) -> CpReport:
    posterior = np.zeros((n_steps, n_steps + 1))
    for i, lj in enumerate(log_joints):
        posterior[i, : lj.size] = np.exp(lj - logsumexp(lj))
    rmap = posterior.argmax(axis=1)
    return CpReport(
        runlength_map=rmap,
        posterior=posterior,
        detected_cps=detect_change_points(rmap),
        log_evidence=float(logsumexp(log_joints[-1])) if log_joints else 0.0,
    )


def peo_run(labels, prior_gamma=None, cfg: HazardConfig | None = None, n_classes: int | None = None,
            prune_threshold: float | None = None) -> list:
    """Fold :func:`peo_step` over ``labels`` and return every state."""
    cfg = cfg or HazardConfig()
    labels = list(labels)
    if prior_gamma is None:
        if n_classes is None:
            observed = [int(z) for z in labels if not is_missing(z)]
            n_classes = max(observed) + 1 if observed else 1
        prior_gamma = np.ones(n_classes)
    state = peo_init(prior_gamma)
    states = []
    for z in labels:
        state = peo_step(state, z, cfg, prior_gamma, prune_threshold)
        states.append(state)
    return states


def peo_detect(labels, prior_gamma=None, cfg: HazardConfig | None = None, n_classes: int | None = None,
               prune_threshold: float | None = None) -> CpReport:
    """PEO detection over 0-based labels with ``MISSING``/``None`` gaps."""
    states = peo_run(labels, prior_gamma, cfg, n_classes, prune_threshold)
    return _report([s.log_joint for s in states], len(states))


class _FpoRuns:
    """Prefix sums of ``log z~`` so any run's statistics are an O(K) lookup."""

    def __init__(self, z_tilde: np.ndarray, missing: np.ndarray):
        logz = np.where(missing[:, None], 0.0, np.log(np.where(missing[:, None], 1.0, z_tilde)))
        self.cum_log = np.vstack([np.zeros(z_tilde.shape[1]), np.cumsum(logz, axis=0)])
        self.cum_n = np.concatenate([[0], np.cumsum(~missing)])

    def stats(self, start: int, stop: int):
        """Statistics of 0-based observations ``start .. stop-1``."""
        return int(self.cum_n[stop] - self.cum_n[start]), self.cum_log[stop] - self.cum_log[start]


def prepare_fpo_inputs(z_tilde, eps_s: float = sampler.SIMPLEX_EPS):
    """Clamp probability vectors to the open simplex; NaN rows mark missing steps."""
    z = np.array(z_tilde, dtype=float)
    if z.ndim != 2:
        raise ValueError("z_tilde must be a T x K matrix")
    missing = np.isnan(z).any(axis=1)
    z[missing] = 1.0 / z.shape[1]
    if np.any(z < 0) or not np.allclose(z.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("each non-missing row of z_tilde must lie on the simplex")
    return sampler.clamp_simplex(z, eps_s), missing


def fpo_detect(z_tilde, priors: FpoPriors | None = None, cfg: HazardConfig | None = None, n_samples: int = 500,
               seed: int = 0, burn_in: int = 200, eps_s: float = sampler.SIMPLEX_EPS,
               prune_threshold: float | None = None, n_jobs: int = 1, backend: str | None = None) -> CpReport:
    """FPO detection over a ``T x K`` matrix of class probabilities.

    Every ``(t, r)`` chain draws from its own stream
    ``SeedSequence(seed, spawn_key=(t, r))``, so results do not depend on
    ``n_jobs``.
    """
    priors = priors or FpoPriors()
    cfg = cfg or HazardConfig()
    z, missing = prepare_fpo_inputs(z_tilde, eps_s)
    n_steps, n_classes = z.shape
    runs = _FpoRuns(z, missing)
    pool = ThreadPoolExecutor(n_jobs) if n_jobs > 1 else None

    def predictive(t: int, r: int) -> float:
        n_obs, sum_logz = runs.stats(t - 1 - r, t - 1)
        bitgen = np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(t, r)))
        chain = sampler.chain_from_stats(n_obs, sum_logz, priors, n_samples, burn_in, bitgen, backend)
        return sampler.log_predictive_from_chain(chain, z[t - 1])

    log_joint = np.zeros(1)
    log_joints = []
    try:
        for t in range(1, n_steps + 1):
            if missing[t - 1] or n_classes == 1:
                log_pred = np.zeros(t)
            else:
                live = [r for r in range(t) if np.isfinite(log_joint[r])]
                mapper = pool.map if pool is not None else map
                values = list(mapper(lambda r: predictive(t, r), live))
                log_pred = np.full(t, -np.inf)
                log_pred[live] = values
            log_joint = _prune(_advance(log_joint, log_pred, cfg, t), prune_threshold)
            log_joints.append(log_joint)
    finally:
        if pool is not None:
            pool.shutdown()
    return _report(log_joints, n_steps)
