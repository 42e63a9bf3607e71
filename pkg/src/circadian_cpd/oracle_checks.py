"""Small-instance self-checks against independent oracles.

Each check returns a :class:`CheckResult`; :func:`run_checks` runs them all.
Implementations under test can be swapped through keyword arguments, which
is how negative controls (e.g. a sign-flipped gradient) are exercised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from . import detector, oracle, sampler
from .kernel import KernelHyperparams, kernel_matrix, kernel_matrix_gradients
from .mixture import gaussian_q

KERNEL_RTOL = 1e-5
Q_RTOL = 1e-4
ORACLE_RTOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    metric: float
    threshold: float
    detail: str = ""


def relative_error(analytic, numeric) -> float:
    """Norm-wise relative error ``|a - n| / max(|n|, 1e-12)``."""
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))


def random_kernel_hp(rng, order: int, period: int) -> KernelHyperparams:
    return KernelHyperparams(
        a=np.concatenate([[rng.uniform(0.8, 1.6)], rng.normal(0.0, 0.4, order)]),
        b=rng.normal(0.0, 0.4, order),
        sigma_a=rng.uniform(0.5, 2.0),
        ell=rng.uniform(0.5, 2.0),
        period=period,
    )


def _kernel_flat(hp: KernelHyperparams) -> np.ndarray:
    return np.concatenate([hp.a, hp.b, [hp.sigma_a, hp.ell]])


def _kernel_from_flat(x: np.ndarray, order: int, period: int) -> KernelHyperparams:
    return KernelHyperparams(a=x[: order + 1], b=x[order + 1 : 2 * order + 1], sigma_a=x[-2], ell=x[-1], period=period)


def kernel_fd_error(hp: KernelHyperparams, grad_fn=kernel_matrix_gradients, step: float = 1e-6) -> float:
    x = _kernel_flat(hp)
    analytic = grad_fn(hp)
    numeric = np.empty_like(analytic)
    for p in range(x.size):
        h = step * max(1.0, abs(x[p]))
        up, down = x.copy(), x.copy()
        up[p] += h
        down[p] -= h
        numeric[p] = (kernel_matrix(_kernel_from_flat(up, hp.order, hp.period))
                      - kernel_matrix(_kernel_from_flat(down, hp.order, hp.period))) / (2 * h)
    return relative_error(analytic, numeric)


def random_q_instance(rng, n_classes: int = 2, order: int = 1, period: int = 6):
    theta = np.concatenate(
        [np.concatenate([[rng.uniform(0.8, 1.6)], rng.normal(0, 0.4, 2 * order), np.log(rng.uniform(0.5, 2.0, 2))])
         for _ in range(n_classes)]
        + [np.log(rng.uniform(0.2, 0.8, period))]
    )
    S = np.empty((n_classes, period, period))
    N = rng.uniform(5.0, 20.0, n_classes)
    for k in range(n_classes):
        X = rng.normal(size=(int(N[k]) + period, period))
        S[k] = N[k] * (X.T @ X) / X.shape[0]
    return theta, S, N


def q_fd_error(theta, S, N, n_classes, order, period, q_fn=gaussian_q, step: float = 1e-6) -> float:
    _, analytic = q_fn(theta, S, N, n_classes, order, period, True)
    numeric = np.empty_like(theta)
    for p in range(theta.size):
        h = step * max(1.0, abs(theta[p]))
        up, down = theta.copy(), theta.copy()
        up[p] += h
        down[p] -= h
        numeric[p] = (gaussian_q(up, S, N, n_classes, order, period, False)[0]
                      - gaussian_q(down, S, N, n_classes, order, period, False)[0]) / (2 * h)
    return relative_error(analytic, numeric)


def check_kernel_gradients(n_instances: int = 50, seed: int = 0, grad_fn=kernel_matrix_gradients) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        hp = random_kernel_hp(rng, int(rng.integers(1, 4)), int(rng.integers(4, 13)))
        worst = max(worst, kernel_fd_error(hp, grad_fn))
    return CheckResult("kernel_gradients", worst < KERNEL_RTOL, worst, KERNEL_RTOL, f"{n_instances} instances")


def check_q_gradients(n_instances: int = 50, seed: int = 1, q_fn=gaussian_q) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        K, C, D = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(4, 9))
        theta, S, N = random_q_instance(rng, K, C, D)
        worst = max(worst, q_fd_error(theta, S, N, K, C, D, q_fn))
    return CheckResult("q_gradients", worst < Q_RTOL, worst, Q_RTOL, f"{n_instances} instances")


def _rel_log_gap(log_a, log_b) -> float:
    gaps = [np.max(np.abs(np.expm1(a - b))) for a, b in zip(log_a, log_b)]
    return float(max(gaps))


def check_peo_enumeration(n_instances: int = 10, seed: int = 2, tau: float = 10.0) -> CheckResult:
    """PEO joint vs exhaustive enumeration with deterministic emissions."""
    rng = np.random.default_rng(seed)
    cfg = detector.HazardConfig(tau)
    worst = 0.0
    for _ in range(n_instances):
        labels = rng.integers(0, 2, size=6)
        gamma = rng.uniform(0.5, 3.0, size=2)
        theta, w = oracle.dirichlet_grid(gamma, 6)
        exact = oracle.exact_hierarchical_marginal(np.eye(2)[labels], theta, w, cfg)
        states = detector.peo_run(labels, gamma, cfg)
        worst = max(worst, _rel_log_gap([s.log_joint for s in states], exact))
    return CheckResult("peo_vs_enumeration", worst < ORACLE_RTOL, worst, ORACLE_RTOL, "K=2, T=6")


def check_enumeration_orders(n_instances: int = 5, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = detector.HazardConfig(8.0)
    worst = 0.0
    for _ in range(n_instances):
        emissions = rng.uniform(0.05, 1.0, size=(5, 2))
        theta, w = oracle.dirichlet_grid(rng.uniform(0.5, 3.0, 2), 4)
        a = oracle.exact_hierarchical_marginal(emissions, theta, w, cfg)
        b = oracle.factored_hierarchical_marginal(emissions, theta, w, cfg)
        worst = max(worst, _rel_log_gap(a, b))
    return CheckResult("enumeration_orders", worst < ORACLE_RTOL, worst, ORACLE_RTOL, "K=2, T=5")


def check_conjugacy(n_gammas: int = 20, n_draws: int = 10**6, seed: int = 4) -> CheckResult:
    """Closed-form predictive vs Monte Carlo ``E[pi_k]`` under ``Dir(gamma)``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_gammas):
        K = int(rng.integers(2, 6))
        gamma = rng.uniform(0.3, 5.0, K)
        k = int(rng.integers(K))
        draws = rng.dirichlet(gamma, size=n_draws)[:, k]
        se = draws.std(ddof=1) / np.sqrt(n_draws)
        worst = max(worst, abs(detector.peo_predictive(gamma, k) - draws.mean()) / se)
    return CheckResult("conjugacy_mc", worst < 3.0, worst, 3.0, "z-score vs MC, 1e6 draws")


def beta_predictive_quadrature(partition, z_new, priors: sampler.FpoPriors, n_grid: int = 1500) -> float:
    """K=2 predictive by brute-force 2-D quadrature over ``(eta, lam_1)``.

    ``lam_1`` is integrated through ``lam = (1 - cos(pi u)) / 2`` on a midpoint
    grid in ``u``, which removes the endpoint singularities of ``Beta(b, .)``
    for ``b < 1``; ``eta`` uses a log-spaced grid.
    """
    partition = np.asarray(partition, dtype=float)
    z_new = np.asarray(z_new, dtype=float)
    b1, b2 = priors.beta_for(2)
    u = (np.arange(n_grid) + 0.5) / n_grid
    log_eta = np.linspace(-9.0, 7.0, n_grid)
    E, U = np.meshgrid(np.exp(log_eta), u, indexing="ij")
    L = 0.5 * (1.0 - np.cos(np.pi * U))
    a1, a2 = E * L, E * (1.0 - L)

    def log_beta_pdf(z):
        return gammaln(E) - gammaln(a1) - gammaln(a2) + (a1 - 1) * np.log(z[0]) + (a2 - 1) * np.log(z[1])

    log_post = priors.kappa * np.log(E) - priors.nu * E  # Ga density times d eta / d log eta
    log_post = log_post + (b1 - 1) * np.log(L) + (b2 - 1) * np.log1p(-L) + np.log(np.sin(np.pi * U))
    for z in partition:
        log_post = log_post + log_beta_pdf(z)
    return float(np.exp(logsumexp(log_post + log_beta_pdf(z_new)) - logsumexp(log_post)))


def check_fpo_quadrature(seed: int = 5, n_samples: int = 20000) -> CheckResult:
    rng = np.random.default_rng(seed)
    priors = sampler.FpoPriors()
    worst = 0.0
    for _ in range(3):
        partition = rng.dirichlet([4.0, 2.0], size=3)
        z_new = rng.dirichlet([4.0, 2.0])
        exact = beta_predictive_quadrature(partition, z_new, priors)
        est = sampler.fpo_predictive(partition, z_new, priors, n_samples, int(rng.integers(2**31)), burn_in=500)
        worst = max(worst, abs(est - exact) / exact)
    return CheckResult("fpo_quadrature", worst < 0.05, worst, 0.05, "K=2, 3-observation partitions")


def run_checks(kernel_grad_fn=kernel_matrix_gradients, q_fn=gaussian_q, quick: bool = False) -> list:
    n = 10 if quick else 50
    return [
        check_peo_enumeration(),
        check_enumeration_orders(),
        check_conjugacy(n_draws=10**5 if quick else 10**6),
        check_fpo_quadrature(n_samples=5000 if quick else 20000),
        check_kernel_gradients(n, grad_fn=kernel_grad_fn),
        check_q_gradients(n, q_fn=q_fn),
    ]


def format_table(results) -> str:
    lines = ["check,status,metric,threshold,detail"]
    for r in results:
        lines.append(f"{r.name},{'PASS' if r.passed else 'FAIL'},{r.metric:.3e},{r.threshold:.1e},{r.detail}")
    return "\n".join(lines)
