"""Gaussian factor model: simulation, closed-form conditionals, dataset I/O.

Observations are stored as rows of ``Y`` (n x m), latent factors as rows of
``F`` (n x H), loadings as ``beta`` (m x H) and idiosyncratic variances as the
vector ``sigma2`` (length m).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from . import distributions as dist
from .distributions import ParameterError


class FactorizationError(np.linalg.LinAlgError):
    """A Cholesky factorization failed even after a jitter retry."""


def max_factors(m: int, cap: int = 30) -> int:
    """Number of candidate columns, ``min(floor((m - 1) / 2), cap)``."""
    return max(0, min((int(m) - 1) // 2, int(cap)))


def _cholesky(A):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * max(1.0, float(np.mean(np.diag(A))))
        try:
            return np.linalg.cholesky(A + jitter * np.eye(A.shape[0]))
        except np.linalg.LinAlgError as err:
            raise FactorizationError(str(err)) from err


@dataclass
class Dataset:
    Y: np.ndarray
    beta0: np.ndarray | None = None
    sigma2_0: np.ndarray | None = None
    meta: dict | None = None

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    @property
    def H0(self) -> int | None:
        return None if self.beta0 is None else self.beta0.shape[1]

    @property
    def Omega0(self) -> np.ndarray | None:
        if self.beta0 is None:
            return None
        return implied_covariance(self.beta0, self.sigma2_0)

    def standardized(self) -> "Dataset":
        """Copy with centered, unit-variance columns; truth is dropped."""
        Y = self.Y - self.Y.mean(axis=0)
        sd = Y.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        return Dataset(Y / sd, meta=dict(self.meta or {}, standardized=True))


@dataclass(frozen=True)
class ScenarioSpec:
    m: int
    H0: int
    n: int = 100
    density: str = "dense"
    zero_fraction: float = 0.3

    def __post_init__(self):
        if self.density not in ("dense", "sparse"):
            raise ParameterError(f"unknown density {self.density!r}")
        if not 0 <= self.zero_fraction < 1:
            raise ParameterError("zero_fraction must lie in [0, 1)")
        if self.H0 < 0 or (self.H0 > 0 and self.H0 >= (self.m - 1) // 2):
            raise ParameterError(f"H0={self.H0} too large for m={self.m}")
        if self.n < 0:
            raise ParameterError("n must be non-negative")

    @property
    def label(self) -> str:
        return f"m{self.m}_H{self.H0}_{self.density}"


def simulate_dataset(rng, spec: ScenarioSpec) -> Dataset:
    """Draws ``Y`` from the factor model with N(0, 1) loadings and unit noise.

    The sparse setting zeroes exactly ``floor(zero_fraction * m * H0)``
    loadings chosen uniformly at random.
    """
    m, H0, n = spec.m, spec.H0, spec.n
    beta0 = rng.standard_normal((m, H0))
    if spec.density == "sparse" and H0 > 0:
        k = int(np.floor(spec.zero_fraction * m * H0))
        idx = rng.choice(m * H0, size=k, replace=False)
        beta0.reshape(-1)[idx] = 0.0
    sigma2_0 = np.ones(m)
    F = rng.standard_normal((n, H0))
    Y = F @ beta0.T + rng.standard_normal((n, m)) * np.sqrt(sigma2_0)
    meta = {"m": m, "H0": H0, "n": n, "density": spec.density, "zero_fraction": spec.zero_fraction}
    return Dataset(Y=Y, beta0=beta0, sigma2_0=sigma2_0, meta=meta)


def implied_covariance(beta, sigma2) -> np.ndarray:
    """``beta beta^T + diag(sigma2)``, symmetrized."""
    beta = np.asarray(beta, dtype=float)
    Omega = beta @ beta.T
    Omega = 0.5 * (Omega + Omega.T)
    Omega[np.diag_indices_from(Omega)] += np.asarray(sigma2, dtype=float)
    return Omega


def sample_factors(rng, Y, beta, sigma2) -> np.ndarray:
    """Draws each ``f_t ~ N(M beta^T Sigma^-1 y_t, M)`` with ``M = (I + beta^T Sigma^-1 beta)^-1``."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    H = beta.shape[1]
    if Y.shape[1] != beta.shape[0] or beta.shape[0] != len(sigma2):
        raise ParameterError("dimension mismatch in sample_factors")
    if H == 0:
        return np.zeros((n, 0))
    bs = beta / sigma2[:, None]
    P = np.eye(H) + beta.T @ bs
    L = _cholesky(P)
    rhs = Y @ bs  # n x H, rows are beta^T Sigma^-1 y_t
    mean = linalg.cho_solve((L, True), rhs.T).T
    z = rng.standard_normal((n, H))
    return mean + linalg.solve_triangular(L, z.T, lower=True, trans="T").T


def _row_posterior(F, Y, kappa, theta):
    """Shared pieces of the row-wise regression ``y_i = F beta_i + e_i``.

    With prior ``beta_i ~ N(0, sigma2_i D)``, ``D = kappa diag(theta)``, the
    posterior covariance is ``sigma2_i A`` with ``A = (F^T F + D^-1)^-1`` for
    every row. ``A`` is factored as ``D^1/2 (I + D^1/2 F^T F D^1/2)^-1 D^1/2``
    so tiny spike variances do not wreck the conditioning.
    """
    d = np.sqrt(kappa * np.asarray(theta, dtype=float))
    H = d.size
    G = F.T @ F
    K = np.eye(H) + d[:, None] * G * d[None, :]
    L = _cholesky(K)
    FtY = F.T @ Y  # H x m
    # mean_i = D^1/2 K^-1 D^1/2 F^T y_i
    mean = d[:, None] * linalg.cho_solve((L, True), d[:, None] * FtY)
    return d, L, mean.T, FtY


def _draw_rows(rng, d, L, mean, scale):
    m, H = mean.shape
    z = rng.standard_normal((H, m))
    dev = linalg.solve_triangular(L, z, lower=True, trans="T")
    return mean + (d[:, None] * dev).T * np.sqrt(scale)[:, None]


def sample_loadings(rng, Y, F, sigma2, kappa, theta) -> np.ndarray:
    """Draws rows ``beta_i ~ N(B_i F^T y_i / sigma2_i, B_i)`` with ``B_i = sigma2_i A``."""
    Y = np.asarray(Y, dtype=float)
    F = np.asarray(F, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    H = len(theta)
    if F.shape != (Y.shape[0], H) or Y.shape[1] != sigma2.size:
        raise ParameterError("dimension mismatch in sample_loadings")
    if H == 0:
        return np.zeros((sigma2.size, 0))
    d, L, mean, _ = _row_posterior(F, Y, kappa, theta)
    return _draw_rows(rng, d, L, mean, sigma2)


def sample_idiosyncratic(rng, Y, F, beta, kappa, theta, c_sigma, b_sigma) -> np.ndarray:
    """Draws ``sigma2_i`` given the loadings.

    The loading prior scales with ``sigma2_i``, so the shape gains ``H / 2``:
    ``InvGamma(c + n/2 + H/2, b + RSS_i / 2 + sum_h beta_ih^2 / (2 kappa theta_h))``.
    """
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    H = beta.shape[1]
    resid = Y - F @ beta.T
    rss = np.sum(resid * resid, axis=0)
    pen = np.sum(beta * beta / (kappa * np.asarray(theta))[None, :], axis=1) if H else 0.0
    shape = c_sigma + 0.5 * n + 0.5 * H
    scale = b_sigma + 0.5 * rss + 0.5 * pen
    return dist.sample_inverse_gamma(rng, shape, scale)


def sample_loadings_and_variances(rng, Y, F, kappa, theta, c_sigma, b_sigma):
    """Joint draw of ``(beta, sigma2)`` given factors and shrinkage parameters.

    ``sigma2_i`` is drawn with ``beta_i`` integrated out,
    ``InvGamma(c + n/2, b + (y_i^T y_i - m_i^T A^-1 m_i) / 2)``, then
    ``beta_i | sigma2_i`` as in :func:`sample_loadings`.
    """
    Y = np.asarray(Y, dtype=float)
    F = np.asarray(F, dtype=float)
    n, m = Y.shape
    H = len(theta)
    yy = np.sum(Y * Y, axis=0)
    if H == 0:
        sigma2 = dist.sample_inverse_gamma(rng, c_sigma + 0.5 * n, b_sigma + 0.5 * yy)
        return np.zeros((m, 0)), sigma2
    d, L, mean, FtY = _row_posterior(F, Y, kappa, theta)
    # m_i^T A^-1 m_i = m_i^T F^T y_i since A^-1 m_i = F^T y_i
    fit = np.sum(mean * FtY.T, axis=1)
    rss = np.maximum(yy - fit, 0.0)
    sigma2 = dist.sample_inverse_gamma(rng, c_sigma + 0.5 * n, b_sigma + 0.5 * rss)
    beta = _draw_rows(rng, d, L, mean, sigma2)
    return beta, sigma2


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, directory) -> Path:
    """Writes ``Y.csv`` (header ``y1..ym``) and ``truth.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = ",".join(f"y{i + 1}" for i in range(dataset.m))
    np.savetxt(directory / "Y.csv", dataset.Y, delimiter=",", header=header, comments="", fmt="%.17g")
    sidecar = {"meta": dataset.meta or {}}
    if dataset.beta0 is not None:
        sidecar["beta0"] = dataset.beta0.tolist()
        sidecar["sigma2_0"] = np.asarray(dataset.sigma2_0).tolist()
        sidecar["H0"] = dataset.H0
    with (directory / "truth.json").open("w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
    return directory


def load_dataset(path) -> Dataset:
    """Reads a dataset directory, or a bare CSV matrix (header row optional)."""
    path = Path(path)
    csv_path = path / "Y.csv" if path.is_dir() else path
    with csv_path.open() as fh:
        first = fh.readline()
    try:
        [float(x) for x in first.strip().split(",")]
        skip = 0
    except ValueError:
        skip = 1
    Y = np.loadtxt(csv_path, delimiter=",", skiprows=skip, ndmin=2)
    sidecar = csv_path.with_name("truth.json")
    if not sidecar.exists():
        return Dataset(Y=Y)
    with sidecar.open() as fh:
        info = json.load(fh)
    if "beta0" not in info:
        return Dataset(Y=Y, meta=info.get("meta"))
    beta0 = np.asarray(info["beta0"], dtype=float).reshape(Y.shape[1], -1)
    return Dataset(Y=Y, beta0=beta0, sigma2_0=np.asarray(info["sigma2_0"], dtype=float), meta=info.get("meta"))
