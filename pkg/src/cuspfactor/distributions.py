"""Random generation and densities for the distributions used by the samplers.

All randomness in the package flows through a :class:`numpy.random.Generator`
created by :func:`make_rng`. Gamma variates are parameterized by shape and
*rate*, inverse gamma variates by shape and *scale* (mean ``scale / (shape - 1)``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

LOG_FLOOR = 1e-300


class ParameterError(ValueError):
    """Raised when a distribution receives invalid parameters."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Returns a PCG64 generator for ``(seed, stream)``.

    Distinct stream ids give independent streams derived from the same seed,
    so chains and datasets can be seeded without sharing generator state.
    """
    if seed < 0 or stream < 0:
        raise ParameterError("seed and stream must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def _check_positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class BetaParams:
    a: float
    b: float

    def __post_init__(self):
        _check_positive("a", self.a)
        _check_positive("b", self.b)

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)


@dataclass(frozen=True)
class GammaParams:
    """Gamma law with ``shape`` and ``rate`` (mean ``shape / rate``)."""

    shape: float
    rate: float

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("rate", self.rate)

    @property
    def mean(self) -> float:
        return self.shape / self.rate


@dataclass(frozen=True)
class InvGammaParams:
    """Inverse gamma law with ``shape`` and ``scale`` (mean ``scale / (shape - 1)``)."""

    shape: float
    scale: float

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("scale", self.scale)

    @property
    def mean(self) -> float:
        return self.scale / (self.shape - 1.0) if self.shape > 1 else np.inf


@dataclass(frozen=True)
class FParams:
    """Scaled F(2a, 2c) law; ``scale`` is 1 for the slab and the deflator for the spike."""

    a: float
    c: float
    scale: float = 1.0

    def __post_init__(self):
        _check_positive("a", self.a)
        _check_positive("c", self.c)
        _check_positive("scale", self.scale)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def sample_log_gamma(rng: np.random.Generator, shape, size=None) -> np.ndarray:
    """Log of a Gamma(shape, 1) draw, accurate for very small shapes.

    Shapes below one use ``G(shape) = G(shape + 1) * U**(1/shape)``, evaluated
    in log space so that draws near zero do not underflow.
    """
    _check_positive("shape", shape)
    shape = np.asarray(shape, dtype=float)
    if size is None:
        size = shape.shape
    small = shape < 1.0
    g = rng.standard_gamma(np.where(small, shape + 1.0, shape), size=size)
    out = np.log(g)
    if np.any(small):
        u = rng.random(size=size)
        out = out + np.where(small, np.log(u) / np.where(small, shape, 1.0), 0.0)
    return out


def _draw_size(size, *params):
    if size is not None:
        return size
    return np.broadcast(*[np.asarray(p) for p in params]).shape


def sample_gamma(rng: np.random.Generator, shape, rate, size=None) -> np.ndarray:
    _check_positive("rate", rate)
    size = _draw_size(size, shape, rate)
    return np.exp(sample_log_gamma(rng, np.broadcast_to(shape, size), size)) / np.asarray(rate, dtype=float)


def sample_inverse_gamma(rng: np.random.Generator, shape, scale, size=None) -> np.ndarray:
    """Inverse gamma draw, ``scale / Gamma(shape, 1)``."""
    _check_positive("scale", scale)
    size = _draw_size(size, shape, scale)
    return np.asarray(scale, dtype=float) * np.exp(-sample_log_gamma(rng, np.broadcast_to(shape, size), size))


def sample_beta(rng: np.random.Generator, a, b, size=None) -> np.ndarray:
    """Beta(a, b) draw built from two log-gamma variates.

    Returned values lie in ``[1e-300, 1]``; shapes as small as ``alpha / H``
    with tiny alpha stay finite.
    """
    _check_positive("a", a)
    _check_positive("b", b)
    if size is None:
        size = np.broadcast(np.asarray(a), np.asarray(b)).shape
    la = sample_log_gamma(rng, np.broadcast_to(a, size), size)
    lb = sample_log_gamma(rng, np.broadcast_to(b, size), size)
    out = np.exp(la - np.logaddexp(la, lb))
    return np.clip(out, LOG_FLOOR, 1.0)


def sample_f_mixture(rng: np.random.Generator, a, c, scale=1.0, size=None):
    """Draws ``(theta, b)`` from the gamma-mixed inverse gamma representation.

    ``b ~ Gamma(a, a / c)`` and ``theta | b ~ InvGamma(c, scale * b)``, so
    ``theta / scale`` is marginally F(2a, 2c).
    """
    _check_positive("a", a)
    _check_positive("c", c)
    _check_positive("scale", scale)
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    b = sample_gamma(rng, a, a / c, size)
    theta = sample_inverse_gamma(rng, c, np.asarray(scale) * b, np.shape(b))
    return theta, b


def sample_gig(rng: np.random.Generator, lam: float, chi: float, psi: float) -> float:
    """Generalized inverse Gaussian with density ``x**(lam-1) exp(-(chi/x + psi*x)/2)``."""
    _check_positive("chi", chi)
    _check_positive("psi", psi)
    omega = np.sqrt(chi * psi)
    y = stats.geninvgauss.rvs(lam, omega, random_state=rng)
    return float(np.sqrt(chi / psi) * y)


def sample_mvn(rng: np.random.Generator, mean, chol_cov) -> np.ndarray:
    """Draw from ``N(mean, L L^T)`` given the lower Cholesky factor ``L``."""
    chol_cov = np.asarray(chol_cov, dtype=float)
    mean = np.asarray(mean, dtype=float)
    d = np.diag(chol_cov)
    if chol_cov.shape != (mean.size, mean.size):
        raise ParameterError("Cholesky factor does not match mean dimension")
    if not np.all(d > 0):
        raise np.linalg.LinAlgError("Cholesky factor must have a positive diagonal")
    return mean + chol_cov @ rng.standard_normal(mean.size)


def sample_two_point(rng: np.random.Generator, log_w0, log_w1) -> np.ndarray:
    """Binary draws with ``P(1) = w1 / (w0 + w1)`` given unnormalized log weights.

    Gumbel-max over two categories; the difference of two Gumbel variates is
    standard logistic.
    """
    log_w0 = np.asarray(log_w0, dtype=float)
    log_w1 = np.asarray(log_w1, dtype=float)
    noise = rng.logistic(size=np.broadcast(log_w0, log_w1).shape)
    return (log_w1 - log_w0 + noise > 0).astype(np.int64)


def sample_categorical_log(rng: np.random.Generator, log_w: np.ndarray) -> np.ndarray:
    """Row-wise categorical draws (0-based) from unnormalized log weights via Gumbel-max."""
    log_w = np.asarray(log_w, dtype=float)
    return np.argmax(log_w + rng.gumbel(size=log_w.shape), axis=-1)


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def f_logdensity(theta, a, c, scale=1.0):
    """Log density of ``scale * F(2a, 2c)``.

    With ``u = a * theta / (c * scale)`` the density is
    ``a / (c B(a, c) scale) * u**(a-1) * (1 + u)**(-(a + c))``.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ParameterError("theta must be positive")
    scale = np.asarray(scale, dtype=float)
    u = a * theta / (c * scale)
    return (
        np.log(a / c)
        - special.betaln(a, c)
        - np.log(scale)
        + (a - 1.0) * np.log(u)
        - (a + c) * np.log1p(u)
    )


def f_density(theta, a, c, scale=1.0):
    return np.exp(f_logdensity(theta, a, c, scale))


def f_cdf(theta, a, c, scale=1.0):
    """CDF of ``scale * F(2a, 2c)``."""
    return stats.f.cdf(np.asarray(theta) / scale, 2 * a, 2 * c)


def gamma_logdensity(x, shape, rate):
    return shape * np.log(rate) - special.gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def inverse_gamma_logdensity(x, shape, scale):
    return shape * np.log(scale) - special.gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


def mvt_logdensity(x, dof, scale_diag, common_scale):
    """Log density of a zero-mean multivariate t with scale ``common_scale * diag(scale_diag)``.

    Args:
        x: vector of length m, or array ``(..., m)`` evaluated row-wise.
        dof: degrees of freedom.
        scale_diag: positive vector of length m.
        common_scale: positive scalar, or array broadcasting against ``x[..., 0]``.

    Returns:
        Log density, a scalar or an array of shape ``x.shape[:-1]``.
    """
    x = np.asarray(x, dtype=float)
    scale_diag = np.asarray(scale_diag, dtype=float)
    common_scale = np.asarray(common_scale, dtype=float)
    if x.shape[-1] != scale_diag.shape[-1]:
        raise ParameterError("dimension mismatch between x and scale_diag")
    _check_positive("scale_diag", scale_diag)
    _check_positive("common_scale", common_scale)
    _check_positive("dof", dof)
    m = x.shape[-1]
    quad = np.sum(x * x / scale_diag, axis=-1) / common_scale
    return (
        special.gammaln(0.5 * (dof + m))
        - special.gammaln(0.5 * dof)
        - 0.5 * m * np.log(dof * np.pi)
        - 0.5 * m * np.log(common_scale)
        - 0.5 * np.sum(np.log(scale_diag))
        - 0.5 * (dof + m) * np.log1p(quad / dof)
    )
