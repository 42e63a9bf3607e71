"""Non-stationary periodic covariance functions.

Each latent class owns a covariance over the ``D`` samples of one period::

    g(t, t') = s(t) s(t') * sigma_a**2 * exp(-2 sin(pi |t - t'| / D)**2 / ell**2)

where the envelope ``s(t)`` is the square of a real Fourier series of order
``C``.  Heteroscedastic per-sample noise is added on the diagonal to form
the class covariance ``Sigma = K + diag(sigma**2)``.

Gradient reconciliation
-----------------------
The analytic derivatives below are derived from the product definition
above and checked against central finite differences in the test-suite:

* ``dg/d ell     = g * 4 sin^2(pi |t - t'| / D) / ell**3``
* ``dg/d sigma_a = 2 g / sigma_a``
* ``dg/d a_0     = gt * (f(t) s(t') + s(t) f(t'))``
* ``dg/d a_c     = gt * 2 (f(t) cos(w_c t) s(t') + s(t) f(t') cos(w_c t'))``
* ``dg/d b_c     = gt * 2 (f(t) sin(w_c t) s(t') + s(t) f(t') sin(w_c t'))``

with ``f`` the (unsquared) Fourier series, ``s = f**2``, ``gt`` the
stationary factor and ``w_c = 2 pi c / D``.  Note the lengthscale
derivative carries ``s(t) s(t')`` once, not squared, and the ``a_0`` line
mixes ``f`` and ``s`` rather than summing the envelopes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefinite

JITTER_SCALE = 1e-8


@dataclass(frozen=True)
class KernelHyperparams:
    """Hyperparameters of one class kernel.

    ``a`` holds the cosine coefficients ``a_0..a_C`` and ``b`` the sine
    coefficients ``b_1..b_C``.
    """

    a: np.ndarray
    b: np.ndarray
    sigma_a: float
    ell: float
    period: int = 24

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma_a", float(self.sigma_a))
        object.__setattr__(self, "ell", float(self.ell))
        object.__setattr__(self, "period", int(self.period))
        if a.size != b.size + 1:
            raise ValueError(f"need len(a) == len(b) + 1, got {a.size} and {b.size}")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if not (self.sigma_a > 0 and self.ell > 0):
            raise ValueError("sigma_a and ell must be positive")
        if b.size > self.period:
            raise ValueError("Fourier order C must not exceed the period D")

    @property
    def order(self) -> int:
        return self.b.size

    @property
    def n_params(self) -> int:
        return 2 * self.order + 3

    def __eq__(self, other):
        if not isinstance(other, KernelHyperparams):
            return NotImplemented
        return (
            np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and self.sigma_a == other.sigma_a
            and self.ell == other.ell
            and self.period == other.period
        )

    __hash__ = None


@dataclass(frozen=True)
class NoiseModel:
    """Per-sample noise standard deviations ``sigma_1..sigma_D``."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float).reshape(-1)
        if np.any(~(sigma > 0)):
            raise ValueError("noise standard deviations must be strictly positive")
        object.__setattr__(self, "sigma", sigma)

    @property
    def variances(self) -> np.ndarray:
        return self.sigma**2

    def __len__(self):
        return self.sigma.size

    def __eq__(self, other):
        if not isinstance(other, NoiseModel):
            return NotImplemented
        return np.array_equal(self.sigma, other.sigma)

    __hash__ = None


@dataclass(frozen=True)
class CovMatrix:
    values: np.ndarray
    cholesky_factor: np.ndarray
    jittered: bool = field(default=False)

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky_factor))))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        from scipy.linalg import cho_solve

        return cho_solve((self.cholesky_factor, True), rhs)


@dataclass(frozen=True)
class KernelGradient:
    d_ell: float
    d_a: np.ndarray
    d_b: np.ndarray
    d_sigma_a: float


def default_times(period: int) -> np.ndarray:
    return np.arange(1, period + 1, dtype=float)


def _angles(hp: KernelHyperparams, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    c = np.arange(1, hp.order + 1, dtype=float)
    return 2.0 * np.pi * np.multiply.outer(t, c) / hp.period


def fourier_series(hp: KernelHyperparams, t):
    """Unsquared Fourier series ``f(t)``; the envelope is ``f(t)**2``."""
    w = _angles(hp, t)
    return hp.a[0] / 2.0 + np.cos(w) @ hp.a[1:] + np.sin(w) @ hp.b


def fourier_envelope(hp: KernelHyperparams, t):
    """Squared Fourier series ``s(t)``, always nonnegative."""
    return fourier_series(hp, t) ** 2


def stationary_periodic(hp: KernelHyperparams, t, t2):
    """Periodic exponential kernel depending only on ``|t - t2|`` modulo the period."""
    dt = np.abs(np.asarray(t, dtype=float) - np.asarray(t2, dtype=float))
    sin2 = np.sin(np.pi * dt / hp.period) ** 2
    return hp.sigma_a**2 * np.exp(-2.0 * sin2 / hp.ell**2)


def nonstationary_kernel(hp: KernelHyperparams, t, t2):
    return fourier_envelope(hp, t) * fourier_envelope(hp, t2) * stationary_periodic(hp, t, t2)


def kernel_matrix(hp: KernelHyperparams, times=None) -> np.ndarray:
    """Gram matrix ``K`` over ``times`` (defaults to ``1..D``)."""
    if times is None:
        times = default_times(hp.period)
    times = np.asarray(times, dtype=float)
    s = fourier_envelope(hp, times)
    gt = stationary_periodic(hp, times[:, None], times[None, :])
    return np.outer(s, s) * gt


def cholesky_with_jitter(values: np.ndarray) -> tuple[np.ndarray, bool]:
    """Lower Cholesky factor; one diagonal jitter retry before giving up."""
    try:
        return np.linalg.cholesky(values), False
    except np.linalg.LinAlgError:
        pass
    n = values.shape[0]
    jitter = JITTER_SCALE * np.trace(values) / n
    try:
        return np.linalg.cholesky(values + jitter * np.eye(n)), True
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance is not positive definite after jitter") from exc


def build_covariance(hp: KernelHyperparams, noise: NoiseModel, times=None) -> CovMatrix:
    """Class covariance ``K + diag(sigma**2)`` with its cached Cholesky factor."""
    if len(noise) != hp.period:
        raise ValueError(f"noise has length {len(noise)}, kernel period is {hp.period}")
    values = kernel_matrix(hp, times) + np.diag(noise.variances)
    values = 0.5 * (values + values.T)
    if not np.all(np.isfinite(values)):
        raise NotPositiveDefinite("covariance has non-finite entries")
    chol, jittered = cholesky_with_jitter(values)
    return CovMatrix(values=values, cholesky_factor=chol, jittered=jittered)


def kernel_gradients(hp: KernelHyperparams, t, t2) -> KernelGradient:
    """Analytic partial derivatives of ``g(t, t2)`` for scalar time arguments."""
    grads = kernel_matrix_gradients(hp, np.array([float(t), float(t2)]))
    g = grads[:, 0, 1]
    n_a = hp.order + 1
    return KernelGradient(
        d_ell=float(g[-1]),
        d_a=g[:n_a].copy(),
        d_b=g[n_a : n_a + hp.order].copy(),
        d_sigma_a=float(g[-2]),
    )


def kernel_matrix_gradients(hp: KernelHyperparams, times=None) -> np.ndarray:
    """Derivatives of the Gram matrix, shape ``(2C + 3, n, n)``.

    Parameter order: ``a_0..a_C, b_1..b_C, sigma_a, ell``.
    """
    if times is None:
        times = default_times(hp.period)
    times = np.asarray(times, dtype=float)
    w = _angles(hp, times)
    cos_w, sin_w = np.cos(w), np.sin(w)
    f = hp.a[0] / 2.0 + cos_w @ hp.a[1:] + sin_w @ hp.b
    s = f**2
    dt = np.abs(times[:, None] - times[None, :])
    sin2 = np.sin(np.pi * dt / hp.period) ** 2
    gt = hp.sigma_a**2 * np.exp(-2.0 * sin2 / hp.ell**2)
    g = np.outer(s, s) * gt

    # ds/dtheta for each Fourier coefficient, shape (P_fourier, n)
    ds = np.concatenate(
        [f[None, :], 2.0 * f[None, :] * cos_w.T, 2.0 * f[None, :] * sin_w.T], axis=0
    )
    d_fourier = (ds[:, :, None] * s[None, None, :] + s[None, :, None] * ds[:, None, :]) * gt
    d_sigma = 2.0 * g / hp.sigma_a
    d_ell = g * 4.0 * sin2 / hp.ell**3
    return np.concatenate([d_fourier, d_sigma[None], d_ell[None]], axis=0)
