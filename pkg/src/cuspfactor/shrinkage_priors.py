"""Generalized CUSP and exchangeable (ESP) shrinkage priors.

A CUSP prior builds increasing spike probabilities ``pi_h`` by cumulating
stick-breaking weights. An ESP prior draws iid slab probabilities ``tau_h``;
sorting them in decreasing order yields a finite CUSP representation with
``pi_h = 1 - tau_(h)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import distributions as dist
from .distributions import ParameterError

STICK_FAMILIES = (
    "legnaro",
    "two_param_ibp",
    "ohn_kim",
    "py_positive",
    "py_negative_finite",
    "custom",
    "finite_esp",
)
ESP_FAMILIES = ("1pb", "2pb", "uniform", "beta")


@dataclass(frozen=True)
class StickBreakingSpec:
    """Law of independent sticks ``nu_h ~ Beta(a_h, b_h)``.

    Use the classmethod constructors rather than filling ``params`` by hand.
    ``H`` is the truncation level; an infinite process is represented by a
    truncation with ``terminal_stick_is_one=True``.
    """

    family: str
    H: int
    params: dict = field(default_factory=dict)
    terminal_stick_is_one: bool = True

    def __post_init__(self):
        if self.family not in STICK_FAMILIES:
            raise ParameterError(f"unknown stick-breaking family {self.family!r}")
        if int(self.H) < 1:
            raise ParameterError("truncation level H must be >= 1")
        a, b = self._raw_params()
        n_free = self.H - 1 if self.terminal_stick_is_one else self.H
        if not (np.all(a[:n_free] > 0) and np.all(b[:n_free] > 0)):
            raise ParameterError(f"{self.family}: implied beta parameters must be positive")

    @classmethod
    def legnaro(cls, alpha, H, terminal_stick_is_one=True):
        return cls("legnaro", H, {"alpha": alpha}, terminal_stick_is_one)

    @classmethod
    def two_param_ibp(cls, alpha, beta, H, terminal_stick_is_one=True):
        return cls("two_param_ibp", H, {"alpha": alpha, "beta": beta}, terminal_stick_is_one)

    @classmethod
    def ohn_kim(cls, alpha, kappa, H, terminal_stick_is_one=True):
        if kappa < 0:
            raise ParameterError("kappa must be >= 0")
        return cls("ohn_kim", H, {"alpha": alpha, "kappa": kappa}, terminal_stick_is_one)

    @classmethod
    def py_positive(cls, alpha, sigma, H, terminal_stick_is_one=True):
        if not 0 <= sigma < 1:
            raise ParameterError("discount sigma must lie in [0, 1)")
        if alpha <= sigma:
            raise ParameterError("Pitman-Yor sticks require alpha > sigma")
        return cls("py_positive", H, {"alpha": alpha, "sigma": sigma}, terminal_stick_is_one)

    @classmethod
    def py_negative_finite(cls, sigma, H):
        if sigma >= 0:
            raise ParameterError("finite Pitman-Yor sticks require sigma < 0")
        return cls("py_negative_finite", H, {"sigma": sigma}, True)

    @classmethod
    def custom(cls, a, b, terminal_stick_is_one=False):
        a = tuple(float(x) for x in a)
        b = tuple(float(x) for x in b)
        if len(a) != len(b):
            raise ParameterError("custom sticks need equal-length a and b")
        return cls("custom", len(a), {"a": a, "b": b}, terminal_stick_is_one)

    @classmethod
    def finite_esp(cls, alpha, H):
        """Sticks of the CUSP representation of the finite 1PB prior."""
        return cls("finite_esp", H, {"alpha": alpha}, False)

    def _raw_params(self):
        H = int(self.H)
        h = np.arange(1, H + 1, dtype=float)
        p = self.params
        if self.family == "legnaro":
            return np.ones(H), np.full(H, float(p["alpha"]))
        if self.family == "two_param_ibp":
            return np.full(H, float(p["beta"])), np.full(H, float(p["beta"]) * p["alpha"])
        if self.family == "ohn_kim":
            return np.full(H, 1.0 + p["kappa"]), np.full(H, float(p["alpha"]))
        if self.family == "py_positive":
            return np.full(H, 1.0 - p["sigma"]), p["alpha"] + h * p["sigma"]
        if self.family == "py_negative_finite":
            return np.full(H, 1.0 - p["sigma"]), (H - h) * abs(p["sigma"])
        if self.family == "custom":
            return np.asarray(p["a"], dtype=float), np.asarray(p["b"], dtype=float)
        return onepb_stick_law(p["alpha"], H)

    def beta_params(self):
        """Per-stick ``(a_h, b_h)`` arrays of length H.

        When the terminal stick is fixed at one, entry ``H`` is reported as
        ``nan`` because it carries no beta law.
        """
        a, b = self._raw_params()
        a, b = a.astype(float), b.astype(float)
        if self.terminal_stick_is_one:
            a[-1] = b[-1] = np.nan
        return a, b


@dataclass(frozen=True)
class CuspDraw:
    sticks: np.ndarray
    weights: np.ndarray
    spike_probs: np.ndarray
    slab_probs: np.ndarray


@dataclass(frozen=True)
class EspSpec:
    """Iid slab probabilities ``tau_h ~ Beta(a0, b0)``.

    ``1pb``: ``a0 = alpha / H, b0 = 1``; ``2pb``: ``a0 = alpha * beta / H,
    b0 = beta``; ``uniform``: ``a0 = b0 = 1``; ``beta``: fixed ``(a0, b0)``.
    ``alpha_prior`` is a :class:`GammaParams` or ``None`` for a fixed alpha.
    """

    family: str
    H: int
    beta: float = 1.0
    a0: float | None = None
    b0: float | None = None
    alpha_prior: dist.GammaParams | None = None

    def __post_init__(self):
        if self.family not in ESP_FAMILIES:
            raise ParameterError(f"unknown ESP family {self.family!r}")
        if int(self.H) < 1:
            raise ParameterError("H must be >= 1")
        if self.family == "beta":
            dist.BetaParams(self.a0, self.b0)
        if self.family == "2pb":
            dist._check_positive("beta", self.beta)

    @property
    def learns_alpha(self) -> bool:
        return self.family in ("1pb", "2pb") and self.alpha_prior is not None

    def beta_params(self, alpha=None):
        if self.family == "1pb":
            dist._check_positive("alpha", alpha)
            return alpha / self.H, 1.0
        if self.family == "2pb":
            dist._check_positive("alpha", alpha)
            return alpha * self.beta / self.H, self.beta
        if self.family == "uniform":
            return 1.0, 1.0
        return float(self.a0), float(self.b0)

    def slab_mean(self, alpha=None) -> float:
        """Prior probability ``q_A = a0 / (a0 + b0)`` that a column is active."""
        a0, b0 = self.beta_params(alpha)
        return a0 / (a0 + b0)


# ---------------------------------------------------------------------------
# CUSP construction
# ---------------------------------------------------------------------------


def sample_sticks(rng, spec: StickBreakingSpec, size=None) -> np.ndarray:
    """Draws sticks, shape ``(H,)`` or ``(size, H)``."""
    a, b = spec._raw_params()
    shape = (spec.H,) if size is None else (int(size), spec.H)
    if spec.terminal_stick_is_one:
        nu = np.ones(shape)
        if spec.H > 1:
            nu[..., :-1] = dist.sample_beta(rng, a[:-1], b[:-1], size=shape[:-1] + (spec.H - 1,))
        return nu
    return dist.sample_beta(rng, a, b, size=shape)


def sticks_to_cusp(nu) -> CuspDraw:
    """Weights and spike/slab probabilities from sticks (works along the last axis).

    Spike probabilities are the cumulative sum of the weights and slab
    probabilities the running product of ``1 - nu``; the two are computed
    independently and cross-checked.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape[-1] == 0:
        raise ParameterError("empty stick vector")
    if np.any(nu <= 0) or np.any(nu > 1):
        raise ParameterError("sticks must lie in (0, 1]")
    slab = np.cumprod(1.0 - nu, axis=-1)
    before = np.concatenate([np.ones(nu.shape[:-1] + (1,)), slab[..., :-1]], axis=-1)
    weights = nu * before
    spike = np.cumsum(weights, axis=-1)
    if not np.allclose(spike + slab, 1.0, rtol=0.0, atol=1e-10):
        raise FloatingPointError("spike and slab probabilities disagree")
    return CuspDraw(sticks=nu, weights=weights, spike_probs=spike, slab_probs=slab)


# ---------------------------------------------------------------------------
# ESP construction and its CUSP representation
# ---------------------------------------------------------------------------


def sample_esp(rng, spec: EspSpec, alpha=None, size=None) -> np.ndarray:
    a0, b0 = spec.beta_params(alpha)
    shape = (spec.H,) if size is None else (int(size), spec.H)
    return dist.sample_beta(rng, a0, b0, size=shape)


def esp_to_cusp(tau):
    """Sorts slab probabilities decreasingly and returns the CUSP representation.

    Args:
        tau: slab probabilities, shape ``(H,)`` or ``(N, H)``.

    Returns:
        ``(cusp, order)`` where ``order[..., h]`` is the 0-based index of the
        h-th largest ``tau``. Ties keep the smaller original index first. The
        CUSP sticks are ``1 - tau_(h) / tau_(h-1)`` with ``tau_(0) = 1``.
    """
    tau = np.asarray(tau, dtype=float)
    if tau.size == 0 or tau.shape[-1] == 0:
        raise ParameterError("empty slab-probability vector")
    order = np.argsort(-tau, axis=-1, kind="stable")
    tau_sorted = np.take_along_axis(tau, order, axis=-1)
    prev = np.concatenate([np.ones(tau.shape[:-1] + (1,)), tau_sorted[..., :-1]], axis=-1)
    ratio = tau_sorted / prev
    nu = 1.0 - ratio
    before = np.concatenate([np.ones(tau.shape[:-1] + (1,)), tau_sorted[..., :-1]], axis=-1)
    weights = nu * before
    cusp = CuspDraw(
        sticks=nu,
        weights=weights,
        spike_probs=1.0 - tau_sorted,
        slab_probs=tau_sorted,
    )
    return cusp, order


def order_statistic_ratios(tau) -> np.ndarray:
    """``tau_(h) / tau_(h-1)`` for the decreasing order statistics (``tau_(0) = 1``)."""
    cusp, _ = esp_to_cusp(tau)
    return 1.0 - cusp.sticks


def onepb_stick_law(alpha, H):
    """Stick law ``nu_h ~ Beta(1, alpha (H - h + 1) / H)`` of the 1PB prior's CUSP form.

    Returns the arrays ``(a_h, b_h)`` for ``h = 1..H``. The ratios
    ``tau_(h) / tau_(h-1) = 1 - nu_h`` then follow ``Beta(b_h, 1)``.
    """
    dist._check_positive("alpha", alpha)
    if int(H) < 1:
        raise ParameterError("H must be >= 1")
    h = np.arange(1, int(H) + 1, dtype=float)
    return np.ones(int(H)), alpha * (H - h + 1.0) / H


def hstar_prior_moments(spec, alpha=None):
    """Prior mean and variance of the number of active columns.

    For ESP priors the indicators are iid Bernoulli(q_A), so the count is
    Binomial(H, q_A); for 1PB this gives ``alpha / (1 + alpha / H)`` and
    ``alpha / (1 + alpha / H)**2``. For stick-breaking priors the moments
    follow from independent sticks: ``E[pi*_h] = prod_{l<=h} E[1 - nu_l]`` and
    ``E[pi*_h pi*_k] = prod_{l<=h} E[(1 - nu_l)^2] prod_{h<l<=k} E[1 - nu_l]``.
    """
    if isinstance(spec, EspSpec):
        q = spec.slab_mean(alpha)
        return spec.H * q, spec.H * q * (1.0 - q)
    if not isinstance(spec, StickBreakingSpec):
        raise NotImplementedError(f"no closed-form moments for {type(spec).__name__}")
    a, b = spec._raw_params()
    a, b = a.astype(float), b.astype(float)
    m1 = b / (a + b)
    m2 = b * (b + 1.0) / ((a + b) * (a + b + 1.0))
    if spec.terminal_stick_is_one:
        m1[-1] = m2[-1] = 0.0
    e1 = np.cumprod(m1)
    e2 = np.cumprod(m2)
    mean = e1.sum()
    H = spec.H
    second = e1.sum()
    for h in range(H - 1):
        # E[pi*_h pi*_k] for k > h
        tail = np.cumprod(m1[h + 1 :])
        second += 2.0 * e2[h] * tail.sum()
    return float(mean), float(second - mean**2)


# ---------------------------------------------------------------------------
# spike-and-slab components for prior studies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiracComponent:
    value: float

    def sample(self, rng, size):
        return np.full(size, float(self.value))

    def cdf(self, x):
        return (np.asarray(x) >= self.value).astype(float)


@dataclass(frozen=True)
class ScaledFComponent:
    a: float
    c: float
    scale: float = 1.0

    def sample(self, rng, size):
        theta, _ = dist.sample_f_mixture(rng, self.a, self.c, self.scale, size=size)
        return theta

    def cdf(self, x):
        return dist.f_cdf(x, self.a, self.c, self.scale)


@dataclass(frozen=True)
class SpikeSlabSpec:
    spike: DiracComponent | ScaledFComponent
    slab: DiracComponent | ScaledFComponent

    @classmethod
    def triple_gamma(cls, a, c, nu0):
        return cls(ScaledFComponent(a, c, nu0), ScaledFComponent(a, c, 1.0))

    def dominance_holds(self, eps_grid) -> bool:
        """Whether ``P_spike(theta <= eps) > P_slab(theta <= eps)`` on every grid point."""
        eps = np.asarray(eps_grid, dtype=float)
        return bool(np.all(self.spike.cdf(eps) > self.slab.cdf(eps)))


@dataclass
class ShrinkageReport:
    """Monte Carlo estimates of ``P(theta_h <= eps)``, shape ``(len(eps), H)``."""

    eps: np.ndarray
    estimate: np.ndarray
    std_error: np.ndarray
    diff_std_error: np.ndarray
    dominance: bool

    @property
    def violations(self) -> list:
        """``(eps, h)`` pairs (1-based h) where the estimate drops by more than 3 SE."""
        drops = np.diff(self.estimate, axis=1) < -3.0 * self.diff_std_error
        return [(float(self.eps[i]), int(h) + 1) for i, h in zip(*np.nonzero(drops))]

    @property
    def monotone(self) -> bool:
        return not self.violations

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["eps", "h", "estimate", "std_error"])
            for i, e in enumerate(self.eps):
                for h in range(self.estimate.shape[1]):
                    writer.writerow(
                        [repr(float(e)), h + 1, repr(float(self.estimate[i, h])), repr(float(self.std_error[i, h]))]
                    )


def sample_ordered_slab_indicators(rng, prior, n_draws, alpha=None) -> np.ndarray:
    """Indicators ``S_h = 1`` (slab) in CUSP order, shape ``(n_draws, H)``.

    ESP draws are reordered by their decreasing slab probabilities before the
    indicators are formed.
    """
    if isinstance(prior, StickBreakingSpec):
        cusp = sticks_to_cusp(sample_sticks(rng, prior, size=n_draws))
        slab = cusp.slab_probs
    else:
        tau = sample_esp(rng, prior, alpha, size=n_draws)
        slab = np.sort(tau, axis=-1)[:, ::-1]
    return (rng.random(slab.shape) < slab).astype(np.int8)


def verify_increasing_shrinkage(rng, prior, spike_slab: SpikeSlabSpec, eps_grid, n_draws, alpha=None):
    """Estimates ``P(theta_h <= eps)`` for each column index of a CUSP or ESP prior.

    The report flags any decrease in h larger than three standard errors of
    the paired difference; it never raises on a violation.
    """
    eps = np.atleast_1d(np.asarray(eps_grid, dtype=float))
    S = sample_ordered_slab_indicators(rng, prior, n_draws, alpha)
    H = S.shape[1]
    spike = spike_slab.spike.sample(rng, (n_draws, H))
    slab = spike_slab.slab.sample(rng, (n_draws, H))
    theta = np.where(S == 1, slab, spike)
    est = np.empty((eps.size, H))
    se = np.empty((eps.size, H))
    dse = np.empty((eps.size, max(H - 1, 0)))
    for i, e in enumerate(eps):
        hit = (theta <= e).astype(float)
        est[i] = hit.mean(axis=0)
        se[i] = hit.std(axis=0, ddof=1) / np.sqrt(n_draws)
        if H > 1:
            dse[i] = np.diff(hit, axis=1).std(axis=0, ddof=1) / np.sqrt(n_draws)
    return ShrinkageReport(eps, est, se, dse, spike_slab.dominance_holds(eps))
