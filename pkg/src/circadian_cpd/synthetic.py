"""Synthetic benchmarks with planted change points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import true_run_lengths
from .kernel import KernelHyperparams, NoiseModel
from .mixture import MixtureParams, ObservationBatch, sample_synthetic

DEFAULT_CPS = (100, 200, 300, 400)
SMALL_CPS = (25, 50, 75)
SMALL_SEGMENT_PROBS = np.array([
    [0.8, 0.1, 0.1],
    [0.1, 0.45, 0.45],
    [0.05, 0.05, 0.9],
    [0.45, 0.45, 0.1],
])


@dataclass
class LabelSequence:
    """Planted labels: ``cps[i]`` is the last step (1-based) of segment ``i``."""

    labels: np.ndarray
    cps: tuple
    segment_probs: np.ndarray

    @property
    def n_steps(self) -> int:
        return int(self.labels.size)

    def run_lengths(self) -> np.ndarray:
        """True run length after each step under the detector's convention."""
        return true_run_lengths(self.n_steps, self.cps)


def _segment_ids(n_steps: int, cps) -> np.ndarray:
    cps = tuple(int(c) for c in cps)
    if any(not 0 < c < n_steps for c in cps) or list(cps) != sorted(set(cps)):
        raise ValueError("change points must be increasing and inside 1..T-1")
    return np.searchsorted(np.asarray(cps), np.arange(n_steps), side="right")


def simulate_labels(rng: np.random.Generator, n_steps: int = 500, n_classes: int = 5,
                    cps=DEFAULT_CPS, alpha: float = 25.0) -> LabelSequence:
    """Piecewise i.i.d. labels; each segment draws ``pi ~ Dir(alpha / K)``."""
    seg = _segment_ids(n_steps, cps)
    probs = rng.dirichlet(np.full(n_classes, alpha / n_classes), size=len(cps) + 1)
    labels = np.array([rng.choice(n_classes, p=probs[s]) for s in seg])
    return LabelSequence(labels, tuple(int(c) for c in cps), probs)


def random_mixture_params(rng: np.random.Generator, n_classes: int, dim: int = 24, order: int = 2) -> MixtureParams:
    """Well-separated generating parameters for simulation studies."""
    hps = []
    for _ in range(n_classes):
        a = np.concatenate([[rng.uniform(0.6, 1.2)], rng.normal(0.0, 0.3, order)])
        hps.append(KernelHyperparams(a=a, b=rng.normal(0.0, 0.3, order), sigma_a=rng.uniform(0.5, 1.5),
                                     ell=rng.uniform(0.5, 2.0), period=dim))
    noise = NoiseModel(rng.uniform(0.1, 0.5, dim))
    return MixtureParams(np.full(n_classes, 1.0 / n_classes), rng.uniform(0.0, 1.0, (n_classes, dim)),
                         tuple(hps), noise)


def mask_mcar(rng: np.random.Generator, n_steps: int, rate: float) -> np.ndarray:
    """Boolean mask with ``round(rate * T)`` steps missing, chosen uniformly."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("missing rate must be in [0, 1)")
    mask = np.zeros(n_steps, dtype=bool)
    mask[rng.choice(n_steps, size=int(round(rate * n_steps)), replace=False)] = True
    return mask


def mask_labels(labels, mask) -> np.ndarray:
    out = np.asarray(labels, dtype=int).copy()
    out[np.asarray(mask, dtype=bool)] = -1
    return out


def mask_days(batch: ObservationBatch, mask) -> ObservationBatch:
    """Hide every entry of the masked days."""
    mask = np.asarray(mask, dtype=bool)
    real_missing = batch.real_missing.copy()
    bin_missing = batch.bin_missing.copy()
    real_missing[mask] = True
    bin_missing[mask] = True
    return ObservationBatch(batch.real, real_missing, batch.bins, bin_missing)


@dataclass
class Simulation:
    truth: LabelSequence
    params: MixtureParams
    data: ObservationBatch
    mask: np.ndarray


def simulate(seed: int, n_steps: int = 500, n_classes: int = 5, dim: int = 24, order: int = 2,
             cps=DEFAULT_CPS, alpha: float = 25.0, missing_rate: float = 0.0) -> Simulation:
    """Labels, generating parameters, observations and a missing-day mask from one seed."""
    label_ss, param_ss, data_ss, mask_ss = np.random.SeedSequence(seed).spawn(4)
    truth = simulate_labels(np.random.default_rng(label_ss), n_steps, n_classes, cps, alpha)
    params = random_mixture_params(np.random.default_rng(param_ss), n_classes, dim, order)
    data = sample_synthetic(params, truth.labels, data_ss)
    mask = mask_mcar(np.random.default_rng(mask_ss), n_steps, missing_rate)
    return Simulation(truth, params, mask_days(data, mask), mask)


def simulate_probability_vectors(seed: int, n_steps: int = 100, cps=SMALL_CPS, segment_probs=SMALL_SEGMENT_PROBS,
                                 concentration: float = 20.0):
    """Class-probability vectors drawn as ``Dir(concentration * p_seg)``.

    Returns ``(z_tilde, truth)``; the truth labels are the per-step argmax,
    i.e. the point estimates a PEO detector would see.
    """
    rng = np.random.default_rng(seed)
    segment_probs = np.asarray(segment_probs, dtype=float)
    seg = _segment_ids(n_steps, cps)
    if seg.max() >= segment_probs.shape[0]:
        raise ValueError("need one class distribution per segment")
    z_tilde = np.array([rng.dirichlet(concentration * segment_probs[s]) for s in seg])
    return z_tilde, LabelSequence(z_tilde.argmax(axis=1), tuple(int(c) for c in cps), segment_probs)
