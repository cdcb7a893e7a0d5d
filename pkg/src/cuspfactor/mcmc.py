"""MCMC for the overfitting factor model under triple-gamma spike-and-slab priors.

Three cycle types are available:

* ``algo1``: column indicators classified from the F-mixture on ``theta_h``.
* ``algo2``: indicators classified from the multivariate-t mixture on the
  loading columns, marginal over ``theta_h``.
* ``cusp-z``: categorical stick-breaking indicators for a truncated
  generalized CUSP prior.

All three share the factor-model update and finish with the global
shrinkage update and an optional boosting step.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import special

from . import distributions as dist
from . import factor_model as fm
from .distributions import ParameterError
from .shrinkage_priors import EspSpec, StickBreakingSpec, sample_sticks, sticks_to_cusp

ALGORITHMS = ("algo1", "algo2", "cusp-z")
TARGET_ACCEPT = 0.44


class NumericalError(RuntimeError):
    """A sampler step failed; the message carries the iteration index."""


@dataclass
class SamplerConfig:
    """Sampler settings. ``iterations`` counts all cycles, burn-in included."""

    algorithm: str = "algo1"
    iterations: int = 15000
    burn_in: int = 5000
    a_theta: float = 2.5
    c_theta: float = 2.5
    esp: str = "1pb"
    esp_beta: float = 2.0
    a_alpha: float | None = 6.0
    b_alpha: float | None = 2.0
    alpha_fixed: float | None = None
    c_nu: float = 10.0
    E_nu: float = 0.01
    nu0_fixed: float | None = None
    c_kappa: float = 5.0
    b_kappa: float = 5.0
    c_sigma: float = 2.5
    b_sigma: float = 1.5
    step_log_alpha: float = 0.3
    step_log_nu0: float = 0.5
    adapt: bool = True
    init_H_active: int = 3
    boosting: bool = True
    H_cap: int = 30
    H: int | None = None
    thin_beta: int = 10
    joint_variance_update: bool = True
    cusp_family: str = "legnaro"
    cusp_beta: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ParameterError(f"unknown algorithm {self.algorithm!r}")
        if self.esp not in ("1pb", "2pb", "uniform"):
            raise ParameterError(f"unknown esp family {self.esp!r}")
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ParameterError("need iterations >= 1 and 0 <= burn_in < iterations")
        for name in ("a_theta", "c_theta", "c_nu", "E_nu", "c_kappa", "b_kappa", "c_sigma", "b_sigma",
                     "step_log_alpha", "step_log_nu0", "esp_beta", "cusp_beta"):
            dist._check_positive(name, getattr(self, name))
        if self.learns_alpha:
            dist._check_positive("a_alpha", self.a_alpha)
            dist._check_positive("b_alpha", self.b_alpha)
        elif self.esp != "uniform":
            dist._check_positive("alpha_fixed", self.alpha_fixed)
        if self.nu0_fixed is not None and not 0 < self.nu0_fixed < 1:
            raise ParameterError("nu0_fixed must lie in (0, 1)")
        if self.thin_beta < 1 or self.init_H_active < 0:
            raise ParameterError("thin_beta >= 1 and init_H_active >= 0 required")
        if self.algorithm == "cusp-z" and self.cusp_family not in ("legnaro", "two_param_ibp"):
            raise ParameterError("cusp-z supports the legnaro and two_param_ibp stick families")

    @property
    def learns_alpha(self) -> bool:
        return self.alpha_fixed is None and self.esp != "uniform" and self.a_alpha is not None

    def resolve_H(self, m: int) -> int:
        H = self.H if self.H is not None else fm.max_factors(m, self.H_cap)
        if H < 1:
            raise ParameterError(f"no candidate columns for m={m}")
        return H

    def esp_spec(self, H: int) -> EspSpec:
        prior = dist.GammaParams(self.a_alpha, self.b_alpha) if self.learns_alpha else None
        return EspSpec(self.esp, H, beta=self.esp_beta, alpha_prior=prior)

    def stick_spec(self, H: int, alpha: float) -> StickBreakingSpec:
        if self.cusp_family == "legnaro":
            return StickBreakingSpec.legnaro(alpha, H)
        return StickBreakingSpec.two_param_ibp(alpha, self.cusp_beta, H)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown sampler settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelState:
    beta: np.ndarray
    F: np.ndarray
    sigma2: np.ndarray
    kappa: float
    theta: np.ndarray
    b_theta: np.ndarray
    S: np.ndarray
    tau: np.ndarray
    alpha: float
    nu0: float
    sticks: np.ndarray | None = None
    z: np.ndarray | None = None

    @property
    def H(self) -> int:
        return self.theta.size

    @property
    def hstar(self) -> int:
        return int(self.S.sum())

    def copy(self) -> "ModelState":
        return ModelState(**{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()})


@dataclass
class ChainOutput:
    hstar: np.ndarray
    S: np.ndarray
    tau: np.ndarray
    theta: np.ndarray
    alpha: np.ndarray
    nu0: np.ndarray
    kappa: np.ndarray
    logdet_omega: np.ndarray
    frob_inv_omega: np.ndarray
    beta_draws: np.ndarray
    sigma2_draws: np.ndarray
    thin_iterations: np.ndarray
    acceptance: dict
    meta: dict = field(default_factory=dict)

    @property
    def n_kept(self) -> int:
        return self.hstar.size

    @property
    def H(self) -> int:
        return self.S.shape[1]


# ---------------------------------------------------------------------------
# log targets
# ---------------------------------------------------------------------------


def log_post_alpha(alpha, hstar, H, a_alpha, b_alpha):
    """Unnormalized ``log p(alpha | H*)`` under the 1PB prior and a Gamma prior."""
    return (hstar + a_alpha - 1.0) * np.log(alpha) - H * np.log(alpha + H) - b_alpha * alpha


def _log_mix(log_tau_spike, log_spike, log_tau_slab, log_slab):
    return np.sum(np.logaddexp(log_tau_spike + log_spike, log_tau_slab + log_slab))


def log_post_nu0_F(nu0, theta, tau, a, c, c_nu, E_nu):
    """Unnormalized log conditional of the deflator given ``theta`` and ``tau`` (F-mixture form)."""
    if not 0 < nu0 < 1:
        return -np.inf
    tau = np.clip(tau, dist.LOG_FLOOR, 1.0)
    log_slab = dist.f_logdensity(theta, a, c)
    log_spike = dist.f_logdensity(theta, a, c, nu0)
    lp = (c_nu - 1.0) * np.log(nu0) - (c_nu / E_nu) * nu0
    return lp + _log_mix(np.log1p(-np.minimum(tau, 1 - 1e-16)), log_spike, np.log(tau), log_slab)


def _t_column_logdens(quad, m, dof, common, half_logdet_sigma):
    """Log multivariate-t density of loading columns with quadratic forms ``quad``."""
    return (
        special.gammaln(0.5 * (dof + m))
        - special.gammaln(0.5 * dof)
        - 0.5 * m * np.log(dof * np.pi)
        - 0.5 * m * np.log(common)
        - half_logdet_sigma
        - 0.5 * (dof + m) * np.log1p(quad / (common * dof))
    )


def _column_quads(beta, sigma2):
    return np.sum(beta * beta / sigma2[:, None], axis=0)


def column_t_logdens(beta, b_theta, kappa, sigma2, nu0, c):
    """Spike and slab log densities of each loading column, marginal over ``theta_h``.

    Returns ``(log_spike, log_slab)``, each of length H.
    """
    m = beta.shape[0]
    quad = _column_quads(beta, sigma2)
    hl = 0.5 * np.sum(np.log(sigma2))
    common = kappa * b_theta / c
    log_slab = _t_column_logdens(quad, m, 2 * c, common, hl)
    log_spike = _t_column_logdens(quad, m, 2 * c, nu0 * common, hl)
    return log_spike, log_slab


def log_post_nu0_t(nu0, beta, b_theta, tau, kappa, sigma2, c, c_nu, E_nu):
    """Unnormalized log conditional of the deflator, multivariate-t mixture form."""
    if not 0 < nu0 < 1:
        return -np.inf
    tau = np.clip(tau, dist.LOG_FLOOR, 1.0)
    log_spike, log_slab = column_t_logdens(beta, b_theta, kappa, sigma2, nu0, c)
    lp = (c_nu - 1.0) * np.log(nu0) - (c_nu / E_nu) * nu0
    return lp + _log_mix(np.log1p(-np.minimum(tau, 1 - 1e-16)), log_spike, np.log(tau), log_slab)


def _rw_log_mh(rng, x, log_target, step):
    """One random-walk MH step on ``log x``; ``log_target`` takes ``x``.

    The Jacobian of the log transform is added to both sides.
    """
    u = np.log(x)
    u_new = u + step * rng.standard_normal()
    x_new = float(np.exp(u_new))
    lp_new = log_target(x_new)
    if not np.isfinite(lp_new):
        return x, False
    log_ratio = lp_new + u_new - log_target(x) - u
    if np.log(rng.random()) < log_ratio:
        return x_new, True
    return x, False


# ---------------------------------------------------------------------------
# individual steps
# ---------------------------------------------------------------------------


def step_classify_F(rng, theta, q, nu0, a, c):
    """Indicators from ``P(S=0) ~ (1-q) p_spike(theta|nu0)``, ``P(S=1) ~ q p_slab(theta)``."""
    l0 = np.log1p(-q) + dist.f_logdensity(theta, a, c, nu0)
    l1 = np.log(q) + dist.f_logdensity(theta, a, c)
    return dist.sample_two_point(rng, l0, l1)


def classify_F_prob(theta, q, nu0, a, c):
    """Slab probability used by :func:`step_classify_F`."""
    l0 = np.log1p(-q) + dist.f_logdensity(theta, a, c, nu0)
    l1 = np.log(q) + dist.f_logdensity(theta, a, c)
    return special.expit(l1 - l0)


def step_classify_t(rng, beta, b_theta, kappa, sigma2, nu0, q, c):
    """Indicators from the multivariate-t spike/slab densities of the loading columns."""
    log_spike, log_slab = column_t_logdens(beta, b_theta, kappa, sigma2, nu0, c)
    return dist.sample_two_point(rng, np.log1p(-q) + log_spike, np.log(q) + log_slab)


def step_sample_tau(rng, S, a0, b0):
    """``tau_h | S_h ~ Beta(a0 + S_h, b0 + 1 - S_h)``."""
    S = np.asarray(S)
    return dist.sample_beta(rng, a0 + S, b0 + 1.0 - S)


def step_sample_alpha(rng, alpha, hstar, H, a_alpha, b_alpha, step):
    """Random-walk MH on ``log alpha`` targeting ``p(alpha | H*)``. Returns ``(alpha, accepted)``."""
    return _rw_log_mh(rng, alpha, lambda x: log_post_alpha(x, hstar, H, a_alpha, b_alpha), step)


def step_sample_nu0(rng, nu0, theta, tau, a, c, c_nu, E_nu, step):
    """Random-walk MH on ``log nu0`` for the F-mixture conditional (proposals >= 1 rejected)."""
    return _rw_log_mh(rng, nu0, lambda x: log_post_nu0_F(x, theta, tau, a, c, c_nu, E_nu), step)


def step_sample_nu0_marginal(rng, nu0, beta, b_theta, tau, kappa, sigma2, c, c_nu, E_nu, step):
    """Random-walk MH on ``log nu0`` for the multivariate-t mixture conditional."""
    return _rw_log_mh(
        rng, nu0, lambda x: log_post_nu0_t(x, beta, b_theta, tau, kappa, sigma2, c, c_nu, E_nu), step
    )


def _theta_update(rng, beta, sigma2, kappa, nu0, S, b_theta, c):
    m = beta.shape[0]
    defl = np.where(S == 1, 1.0, nu0)
    scale = defl * b_theta + 0.5 * _column_quads(beta, sigma2) / kappa
    return np.maximum(dist.sample_inverse_gamma(rng, c + 0.5 * m, scale), dist.LOG_FLOOR)


def _b_update(rng, theta, nu0, S, a, c):
    defl = np.where(S == 1, 1.0, nu0)
    return dist.sample_gamma(rng, a + c, a / c + defl / theta)


def step_sample_theta_b(rng, beta, sigma2, kappa, nu0, S, theta, b_theta, a, c, b_first=True):
    """Column shrinkage parameters and their gamma mixing variables.

    ``theta_h ~ InvGamma(c + m/2, nu0^(1-S_h) b_h + sum_i beta_ih^2 / (2 kappa sigma2_i))`` and
    ``b_h ~ Gamma(a + c, a/c + nu0^(1-S_h) / theta_h)``. ``b_first`` selects the F-classification
    order; the t-classification cycle draws ``theta`` first.
    """
    S = np.asarray(S)
    if b_first:
        b_theta = _b_update(rng, theta, nu0, S, a, c)
        theta = _theta_update(rng, beta, sigma2, kappa, nu0, S, b_theta, c)
    else:
        theta = _theta_update(rng, beta, sigma2, kappa, nu0, S, b_theta, c)
        b_theta = _b_update(rng, theta, nu0, S, a, c)
    return theta, b_theta


def step_sample_kappa(rng, beta, theta, sigma2, c_kappa, b_kappa):
    """``kappa ~ InvGamma(c + mH/2, b + S_beta/2)``, ``S_beta = sum_h theta_h^-1 sum_i beta_ih^2/sigma2_i``."""
    m, H = beta.shape
    s_beta = np.sum(_column_quads(beta, sigma2) / theta)
    return float(dist.sample_inverse_gamma(rng, c_kappa + 0.5 * m * H, b_kappa + 0.5 * s_beta))


def step_boost(rng, theta, kappa, b_theta, S, nu0, c_theta, c_kappa, b_kappa):
    """Redraws ``kappa`` with every product ``psi_h = kappa * theta_h`` held fixed.

    In the ``(kappa, psi)`` parameterization the loadings depend on ``psi``
    only, and ``kappa | psi, b, S, nu0`` is generalized inverse Gaussian with
    ``lambda = H c_theta - c_kappa``, ``chi = 2 b_kappa`` and
    ``psi_gig = 2 sum_h nu0^(1-S_h) b_h / psi_h``.
    """
    psi = kappa * theta
    defl = np.where(np.asarray(S) == 1, 1.0, nu0)
    lam = theta.size * c_theta - c_kappa
    kappa_new = dist.sample_gig(rng, lam, 2.0 * b_kappa, 2.0 * np.sum(defl * b_theta / psi))
    return psi / kappa_new, kappa_new


def stick_posterior_params(z, a, b):
    """``(a_l + #{z_h = l}, b_l + #{z_h > l})`` for 1-based indicators ``z``."""
    z = np.asarray(z)
    H = len(a)
    counts_eq = np.bincount(z, minlength=H + 1)[1 : H + 1]
    counts_gt = np.array([np.sum(z > l) for l in range(1, H + 1)])
    return np.asarray(a, dtype=float) + counts_eq, np.asarray(b, dtype=float) + counts_gt


def step_cusp_z(rng, beta, b_theta, kappa, sigma2, nu0, sticks, stick_spec: StickBreakingSpec, c):
    """Categorical indicators and stick update for a truncated CUSP prior.

    ``P(z_h = l) ~ w_l p_spike(beta_h)`` for ``l <= h`` and ``w_l p_slab(beta_h)``
    otherwise. Sticks are then redrawn from
    ``Beta(a_l + #{z_h = l}, b_l + #{z_h > l})`` with the last stick fixed at one.

    Returns ``(z, sticks, cusp)`` with 1-based ``z``.
    """
    H = sticks.size
    cusp = sticks_to_cusp(sticks)
    log_spike, log_slab = column_t_logdens(beta, b_theta, kappa, sigma2, nu0, c)
    ell = np.arange(1, H + 1)
    hh = np.arange(1, H + 1)[:, None]
    with np.errstate(divide="ignore"):
        log_w = np.log(cusp.weights)[None, :]
    logits = log_w + np.where(ell[None, :] <= hh, log_spike[:, None], log_slab[:, None])
    z = dist.sample_categorical_log(rng, logits) + 1
    a, b = stick_posterior_params(z, *stick_spec._raw_params())
    new = np.ones(H)
    if H > 1:
        new[:-1] = dist.sample_beta(rng, a[:-1], b[:-1])
        # a stick of exactly one would end the process early
        new[:-1] = np.minimum(new[:-1], 1.0 - 1e-12)
    return z, new, sticks_to_cusp(new)


# ---------------------------------------------------------------------------
# initialization and prior simulation
# ---------------------------------------------------------------------------


def _sample_nu0_prior(rng, cfg):
    if cfg.nu0_fixed is not None:
        return float(cfg.nu0_fixed)
    while True:
        nu0 = float(dist.sample_gamma(rng, cfg.c_nu, cfg.c_nu / cfg.E_nu))
        if nu0 < 1.0:
            return nu0


def _initial_alpha(rng, cfg, H):
    if cfg.esp == "uniform" and cfg.algorithm != "cusp-z":
        return float(H)
    if cfg.learns_alpha:
        return float(dist.sample_gamma(rng, cfg.a_alpha, cfg.b_alpha))
    return float(cfg.alpha_fixed)


def _tau_params(cfg, H, alpha):
    return cfg.esp_spec(H).beta_params(alpha)


def init_state(rng, Y, cfg: SamplerConfig) -> ModelState:
    """Starting state with exactly ``cfg.init_H_active`` slab columns.

    Everything else is drawn from the prior given those indicators.
    """
    Y = np.asarray(Y, dtype=float)
    n, m = Y.shape
    H = cfg.resolve_H(m)
    k = cfg.init_H_active
    if k > H:
        raise ParameterError(f"init_H_active={k} exceeds H={H}")
    alpha = _initial_alpha(rng, cfg, H)
    nu0 = _sample_nu0_prior(rng, cfg)
    sticks = z = None
    if cfg.algorithm == "cusp-z":
        spec = cfg.stick_spec(H, alpha)
        sticks = sample_sticks(rng, spec)
        sticks[:-1] = np.minimum(sticks[:-1], 1.0 - 1e-12)
        S = np.zeros(H, dtype=np.int64)
        S[: min(k, H - 1)] = 1
        z = np.where(S == 1, H, 1)
        tau = sticks_to_cusp(sticks).slab_probs
    else:
        S = np.zeros(H, dtype=np.int64)
        S[rng.choice(H, size=k, replace=False)] = 1
        a0, b0 = _tau_params(cfg, H, alpha)
        tau = step_sample_tau(rng, S, a0, b0)
    b_theta = dist.sample_gamma(rng, cfg.a_theta, cfg.a_theta / cfg.c_theta, size=H)
    theta = dist.sample_inverse_gamma(rng, cfg.c_theta, np.where(S == 1, 1.0, nu0) * b_theta)
    kappa = float(dist.sample_inverse_gamma(rng, cfg.c_kappa, cfg.b_kappa))
    sigma2 = dist.sample_inverse_gamma(rng, cfg.c_sigma, cfg.b_sigma, size=m)
    beta = rng.standard_normal((m, H)) * np.sqrt(kappa * theta[None, :] * sigma2[:, None])
    F = rng.standard_normal((n, H))
    return ModelState(beta, F, sigma2, kappa, theta, b_theta, S, tau, alpha, nu0, sticks, z)


def draw_from_prior(rng, m, n, cfg: SamplerConfig):
    """Joint draw of ``(state, Y)`` from the ESP factor model prior.

    This is the marginal-conditional simulator of a joint-distribution test.
    """
    if cfg.algorithm == "cusp-z":
        raise ParameterError("prior simulation is implemented for the ESP cycles")
    H = cfg.resolve_H(m)
    alpha = _initial_alpha(rng, cfg, H)
    a0, b0 = _tau_params(cfg, H, alpha)
    tau = dist.sample_beta(rng, a0, b0, size=H)
    S = (rng.random(H) < tau).astype(np.int64)
    nu0 = _sample_nu0_prior(rng, cfg)
    b_theta = dist.sample_gamma(rng, cfg.a_theta, cfg.a_theta / cfg.c_theta, size=H)
    theta = dist.sample_inverse_gamma(rng, cfg.c_theta, np.where(S == 1, 1.0, nu0) * b_theta)
    kappa = float(dist.sample_inverse_gamma(rng, cfg.c_kappa, cfg.b_kappa))
    sigma2 = dist.sample_inverse_gamma(rng, cfg.c_sigma, cfg.b_sigma, size=m)
    beta = rng.standard_normal((m, H)) * np.sqrt(kappa * theta[None, :] * sigma2[:, None])
    F = rng.standard_normal((n, H))
    state = ModelState(beta, F, sigma2, kappa, theta, b_theta, S, tau, alpha, nu0)
    return state, simulate_observations(rng, state)


def simulate_observations(rng, state: ModelState) -> np.ndarray:
    """``Y = F beta^T + E`` with ``E`` rows ``N(0, diag(sigma2))``."""
    n = state.F.shape[0]
    noise = rng.standard_normal((n, state.sigma2.size)) * np.sqrt(state.sigma2)
    return state.F @ state.beta.T + noise


# ---------------------------------------------------------------------------
# the sampler
# ---------------------------------------------------------------------------


class Sampler:
    """Owns a chain's state, generator and MH step sizes.

    ``Y`` may be replaced between sweeps (as a joint-distribution test does).
    """

    def __init__(self, rng, Y, cfg: SamplerConfig, state: ModelState | None = None):
        self.rng = rng
        self.Y = np.asarray(Y, dtype=float)
        self.cfg = cfg
        self.H = cfg.resolve_H(self.Y.shape[1])
        self.state = state if state is not None else init_state(rng, self.Y, cfg)
        if self.state.H != self.H:
            raise ParameterError("state does not match the configured number of columns")
        self.log_step = {"alpha": np.log(cfg.step_log_alpha), "nu0": np.log(cfg.step_log_nu0)}
        self.accepted = {"alpha": 0, "nu0": 0}
        self.proposed = {"alpha": 0, "nu0": 0}
        self._window = {"alpha": [0, 0], "nu0": [0, 0]}
        self._n_adapt = 0
        self.esp = cfg.esp_spec(self.H)
        if cfg.algorithm == "cusp-z":
            self.stick_spec = cfg.stick_spec(self.H, self.state.alpha)

    # -- bookkeeping -------------------------------------------------------

    def _record_mh(self, name, accepted):
        self.proposed[name] += 1
        self.accepted[name] += int(accepted)
        self._window[name][0] += 1
        self._window[name][1] += int(accepted)

    def adapt(self):
        """Nudges log step sizes toward the target acceptance rate."""
        self._n_adapt += 1
        gain = 1.0 / np.sqrt(self._n_adapt)
        for name, (tried, acc) in self._window.items():
            if tried:
                self.log_step[name] += gain * (acc / tried - TARGET_ACCEPT)
                self.log_step[name] = float(np.clip(self.log_step[name], np.log(1e-3), np.log(10.0)))
            self._window[name] = [0, 0]

    def acceptance_rates(self) -> dict:
        return {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else None) for k in self.accepted}

    # -- one cycle ---------------------------------------------------------

    def update_model(self):
        """Loadings, idiosyncratic variances and factors."""
        st, cfg, rng, Y = self.state, self.cfg, self.rng, self.Y
        if cfg.joint_variance_update:
            st.beta, st.sigma2 = fm.sample_loadings_and_variances(
                rng, Y, st.F, st.kappa, st.theta, cfg.c_sigma, cfg.b_sigma
            )
        else:
            st.sigma2 = fm.sample_idiosyncratic(
                rng, Y, st.F, st.beta, st.kappa, st.theta, cfg.c_sigma, cfg.b_sigma
            )
            st.beta = fm.sample_loadings(rng, Y, st.F, st.sigma2, st.kappa, st.theta)
        st.F = fm.sample_factors(rng, Y, st.beta, st.sigma2)

    def _update_nu0(self, t_form):
        st, cfg = self.state, self.cfg
        if cfg.nu0_fixed is not None:
            return
        step = float(np.exp(self.log_step["nu0"]))
        if t_form:
            st.nu0, ok = step_sample_nu0_marginal(
                self.rng, st.nu0, st.beta, st.b_theta, st.tau, st.kappa, st.sigma2,
                cfg.c_theta, cfg.c_nu, cfg.E_nu, step,
            )
        else:
            st.nu0, ok = step_sample_nu0(
                self.rng, st.nu0, st.theta, st.tau, cfg.a_theta, cfg.c_theta, cfg.c_nu, cfg.E_nu, step
            )
        self._record_mh("nu0", ok)

    def _update_alpha_and_tau(self):
        st, cfg = self.state, self.cfg
        if cfg.learns_alpha:
            step = float(np.exp(self.log_step["alpha"]))
            # 2PB shares q_A = alpha / (alpha + H) with 1PB, hence the same target
            st.alpha, ok = step_sample_alpha(self.rng, st.alpha, st.hstar, self.H, cfg.a_alpha, cfg.b_alpha, step)
            self._record_mh("alpha", ok)
        a0, b0 = self.esp.beta_params(st.alpha)
        st.tau = step_sample_tau(self.rng, st.S, a0, b0)

    def _finish(self, b_first):
        st, cfg, rng = self.state, self.cfg, self.rng
        st.theta, st.b_theta = step_sample_theta_b(
            rng, st.beta, st.sigma2, st.kappa, st.nu0, st.S, st.theta, st.b_theta,
            cfg.a_theta, cfg.c_theta, b_first=b_first,
        )
        st.kappa = step_sample_kappa(rng, st.beta, st.theta, st.sigma2, cfg.c_kappa, cfg.b_kappa)
        if cfg.boosting:
            st.theta, st.kappa = step_boost(
                rng, st.theta, st.kappa, st.b_theta, st.S, st.nu0, cfg.c_theta, cfg.c_kappa, cfg.b_kappa
            )

    def sweep(self):
        st, cfg, rng = self.state, self.cfg, self.rng
        self.update_model()
        if cfg.algorithm == "algo1":
            self._update_nu0(t_form=False)
            q = self.esp.slab_mean(st.alpha)
            st.S = step_classify_F(rng, st.theta, q, st.nu0, cfg.a_theta, cfg.c_theta)
            self._update_alpha_and_tau()
            self._finish(b_first=True)
        elif cfg.algorithm == "algo2":
            self._update_nu0(t_form=True)
            q = self.esp.slab_mean(st.alpha)
            st.S = step_classify_t(rng, st.beta, st.b_theta, st.kappa, st.sigma2, st.nu0, q, cfg.c_theta)
            self._update_alpha_and_tau()
            self._finish(b_first=False)
        else:
            self._update_nu0(t_form=True)
            st.z, st.sticks, cusp = step_cusp_z(
                rng, st.beta, st.b_theta, st.kappa, st.sigma2, st.nu0, st.sticks,
                self.stick_spec, cfg.c_theta,
            )
            if cfg.learns_alpha and cfg.cusp_family == "legnaro":
                # Gamma prior is conjugate for Beta(1, alpha) sticks
                shape = cfg.a_alpha + self.H - 1
                rate = cfg.b_alpha - np.sum(np.log1p(-st.sticks[:-1]))
                st.alpha = float(dist.sample_gamma(rng, shape, rate))
                self.stick_spec = cfg.stick_spec(self.H, st.alpha)
            st.S = (st.z > np.arange(1, self.H + 1)).astype(np.int64)
            st.tau = cusp.slab_probs
            self._finish(b_first=False)


def omega_functionals(beta, sigma2):
    """``(log det Omega, ||Omega^-1||_F)`` for ``Omega = beta beta^T + diag(sigma2)``."""
    Omega = fm.implied_covariance(beta, sigma2)
    L = np.linalg.cholesky(Omega)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    Linv = np.linalg.solve(L, np.eye(L.shape[0]))
    inv = Linv.T @ Linv
    return float(logdet), float(np.sqrt(np.sum(inv * inv)))


def run_chain(rng, dataset, cfg: SamplerConfig, progress=None) -> ChainOutput:
    """Runs ``cfg.iterations`` cycles and records every post-burn-in draw.

    ``beta`` and ``sigma2`` are stored every ``cfg.thin_beta`` kept draws;
    scalar functionals of ``Omega`` are computed every iteration.
    """
    Y = dataset.Y if isinstance(dataset, fm.Dataset) else np.asarray(dataset, dtype=float)
    t0 = time.perf_counter()
    sampler = Sampler(rng, Y, cfg)
    H, m = sampler.H, Y.shape[1]
    K = cfg.iterations - cfg.burn_in
    n_thin = (K + cfg.thin_beta - 1) // cfg.thin_beta
    out = {
        "hstar": np.empty(K, dtype=np.int64),
        "S": np.empty((K, H), dtype=np.int8),
        "tau": np.empty((K, H)),
        "theta": np.empty((K, H)),
        "alpha": np.empty(K),
        "nu0": np.empty(K),
        "kappa": np.empty(K),
        "logdet_omega": np.empty(K),
        "frob_inv_omega": np.empty(K),
    }
    beta_draws = np.empty((n_thin, m, H))
    sigma2_draws = np.empty((n_thin, m))
    thin_it = np.empty(n_thin, dtype=np.int64)
    for it in range(cfg.iterations):
        try:
            sampler.sweep()
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as err:
            raise NumericalError(f"iteration {it}: {err}") from err
        if cfg.adapt and it < cfg.burn_in and (it + 1) % 50 == 0:
            sampler.adapt()
        if it < cfg.burn_in:
            continue
        k = it - cfg.burn_in
        st = sampler.state
        out["hstar"][k] = st.hstar
        out["S"][k] = st.S
        out["tau"][k] = st.tau
        out["theta"][k] = st.theta
        out["alpha"][k] = st.alpha
        out["nu0"][k] = st.nu0
        out["kappa"][k] = st.kappa
        try:
            out["logdet_omega"][k], out["frob_inv_omega"][k] = omega_functionals(st.beta, st.sigma2)
        except np.linalg.LinAlgError as err:
            raise NumericalError(f"iteration {it}: {err}") from err
        if k % cfg.thin_beta == 0:
            j = k // cfg.thin_beta
            beta_draws[j] = st.beta
            sigma2_draws[j] = st.sigma2
            thin_it[j] = k
        if progress is not None:
            progress(it)
    meta = {
        "config": cfg.to_dict(),
        "H": H,
        "m": m,
        "n": Y.shape[0],
        "wall_time": time.perf_counter() - t0,
        "final_log_steps": {k: float(v) for k, v in sampler.log_step.items()},
    }
    return ChainOutput(
        beta_draws=beta_draws,
        sigma2_draws=sigma2_draws,
        thin_iterations=thin_it,
        acceptance=sampler.acceptance_rates(),
        meta=meta,
        **out,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_SCALARS = ("hstar", "alpha", "nu0", "kappa", "logdet_omega", "frob_inv_omega")


def _write_matrix(path, arr, prefix, fmt):
    header = ",".join(f"{prefix}{j + 1}" for j in range(arr.shape[1]))
    np.savetxt(path, arr, delimiter=",", header=header, comments="", fmt=fmt)


def save_chain(output: ChainOutput, directory, extra_meta=None) -> Path:
    """Writes ``draws.csv``, ``S.csv``, ``tau.csv``, ``theta.csv``, ``beta.npz`` and ``meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    K = output.n_kept
    with (directory / "draws.csv").open("w") as fh:
        fh.write("iteration," + ",".join(_SCALARS) + "\n")
        for k in range(K):
            vals = [str(int(output.hstar[k]))] + [repr(float(getattr(output, s)[k])) for s in _SCALARS[1:]]
            fh.write(f"{k}," + ",".join(vals) + "\n")
    _write_matrix(directory / "S.csv", output.S, "h", "%d")
    _write_matrix(directory / "tau.csv", output.tau, "h", "%.17g")
    _write_matrix(directory / "theta.csv", output.theta, "h", "%.17g")
    np.savez_compressed(
        directory / "beta.npz",
        beta=output.beta_draws,
        sigma2=output.sigma2_draws,
        iterations=output.thin_iterations,
    )
    meta = dict(output.meta)
    meta["acceptance"] = output.acceptance
    meta.update(extra_meta or {})
    with (directory / "meta.json").open("w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True, default=float)
    return directory


def load_chain(directory) -> ChainOutput:
    directory = Path(directory)
    draws = np.loadtxt(directory / "draws.csv", delimiter=",", skiprows=1, ndmin=2)
    cols = {name: draws[:, j + 1] for j, name in enumerate(_SCALARS)}

    def mat(name, dtype=float):
        return np.loadtxt(directory / name, delimiter=",", skiprows=1, ndmin=2).astype(dtype)

    with (directory / "meta.json").open() as fh:
        meta = json.load(fh)
    beta_path = directory / "beta.npz"
    if beta_path.exists():
        with np.load(beta_path) as z:
            beta, sigma2, it = z["beta"], z["sigma2"], z["iterations"]
    else:
        beta = sigma2 = it = None
    return ChainOutput(
        hstar=cols["hstar"].astype(np.int64),
        S=mat("S.csv", np.int8),
        tau=mat("tau.csv"),
        theta=mat("theta.csv"),
        alpha=cols["alpha"],
        nu0=cols["nu0"],
        kappa=cols["kappa"],
        logdet_omega=cols["logdet_omega"],
        frob_inv_omega=cols["frob_inv_omega"],
        beta_draws=beta,
        sigma2_draws=sigma2,
        thin_iterations=it,
        acceptance=meta.get("acceptance", {}),
        meta=meta,
    )
