"""Posterior summaries of a chain: H* distribution, CUSP reordering, MSE of Omega, ESS."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import factor_model as fm
from .distributions import ParameterError

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class HStarSummary:
    pmf: np.ndarray
    mode: int
    mode_tied: bool
    ordinate: float | None = None
    H0: int | None = None

    def quantiles(self, probs=(0.05, 0.95)) -> tuple:
        cdf = np.cumsum(self.pmf)
        return tuple(int(np.searchsorted(cdf, p - 1e-12)) for p in probs)


def summarize_hstar(hstar, H, H0=None) -> HStarSummary:
    """Empirical posterior of the number of active columns.

    Args:
        hstar: integer draws of H*, or a :class:`ChainOutput`.
        H: number of candidate columns (the pmf has support ``0..H``).
        H0: true dimension, if known; adds ``p(H* = H0 | y)``.

    Ties for the mode resolve to the smallest value and set ``mode_tied``.
    """
    hstar = np.asarray(getattr(hstar, "hstar", hstar))
    if hstar.size == 0:
        raise ParameterError("empty chain")
    if hstar.min() < 0 or hstar.max() > H:
        raise ParameterError("H* draws outside 0..H")
    counts = np.bincount(hstar.astype(np.int64), minlength=H + 1)
    pmf = counts / counts.sum()
    top = np.flatnonzero(counts == counts.max())
    ordinate = None if H0 is None else (float(pmf[H0]) if 0 <= H0 <= H else 0.0)
    return HStarSummary(pmf=pmf, mode=int(top[0]), mode_tied=top.size > 1, ordinate=ordinate, H0=H0)


@dataclass
class CuspReordered:
    tau_sorted: np.ndarray
    spike_probs: np.ndarray
    theta_star: np.ndarray
    order: np.ndarray

    def box_stats(self, quantiles=QUANTILES) -> dict:
        """Per-column quantiles of ``pi_h`` and ``theta*_h``, each ``(len(quantiles), H)``."""
        q = np.asarray(quantiles)
        return {
            "pi": np.quantile(self.spike_probs, q, axis=0),
            "theta_star": np.quantile(self.theta_star, q, axis=0),
        }


def cusp_reorder(tau, theta) -> CuspReordered:
    """Sorts each draw's slab probabilities decreasingly and permutes ``theta`` alike.

    Ties keep the smaller column index first.
    """
    if tau is None or theta is None:
        raise ParameterError("tau and theta draws are required")
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if tau.shape != theta.shape or tau.size == 0:
        raise ParameterError("tau and theta draws must be nonempty and the same shape")
    order = np.argsort(-tau, axis=1, kind="stable")
    ts = np.take_along_axis(tau, order, axis=1)
    return CuspReordered(ts, 1.0 - ts, np.take_along_axis(theta, order, axis=1), order)


def mse_omega(beta_draws, sigma2_draws, Omega0) -> float:
    """Posterior mean squared error of ``Omega = beta beta^T + Sigma`` over the lower triangle."""
    if Omega0 is None:
        raise ParameterError("true covariance required for MSE")
    beta_draws = np.asarray(beta_draws, dtype=float)
    sigma2_draws = np.asarray(sigma2_draws, dtype=float)
    if beta_draws.ndim != 3 or beta_draws.shape[0] == 0:
        raise ParameterError("need a nonempty stack of loading draws")
    m = Omega0.shape[0]
    il = np.tril_indices(m)
    total = 0.0
    for beta, s2 in zip(beta_draws, sigma2_draws):
        d = (fm.implied_covariance(beta, s2) - Omega0)[il]
        total += np.mean(d * d)
    return float(total / beta_draws.shape[0])


def _autocovariance(x):
    n = x.size
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    return np.fft.irfft(f * np.conj(f), nfft)[:n] / n


def ess(x) -> float:
    """Effective sample size with Geyer's initial monotone sequence estimator.

    Constant sequences return 1.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 100:
        raise ParameterError("ESS needs at least 100 draws")
    acov = _autocovariance(x)
    if acov[0] <= 0:
        return 1.0
    rho = acov / acov[0]
    # pair sums Gamma_k = rho_2k + rho_2k+1
    n_pairs = n // 2
    gam = rho[: 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    pos = np.flatnonzero(gam <= 0)
    k = pos[0] if pos.size else gam.size
    gam = np.minimum.accumulate(gam[:k])
    tau = -1.0 + 2.0 * gam.sum()
    # antithetic chains can give tau < 1; cap ESS at n log10(n)
    tau = max(tau, 1.0 / np.log10(n))
    return float(n / tau)


# ---------------------------------------------------------------------------
# figure data and summary files
# ---------------------------------------------------------------------------


def write_figure_data(output, directory) -> list:
    """Writes the trace and box-plot CSVs for a chain; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    p = directory / "fig_hstar_trace.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "hstar"])
        w.writerows(enumerate(int(h) for h in output.hstar))
    paths.append(p)
    p = directory / "fig_alpha_trace.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "alpha"])
        w.writerows((k, repr(float(a))) for k, a in enumerate(output.alpha))
    paths.append(p)
    stats = cusp_reorder(output.tau, output.theta).box_stats()
    p = directory / "fig_cusp_box.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "h", "q05", "q25", "q50", "q75", "q95"])
        for name, q in stats.items():
            for h in range(q.shape[1]):
                w.writerow([name, h + 1] + [repr(float(v)) for v in q[:, h]])
    paths.append(p)
    return paths


def chain_summary(output, H0=None, Omega0=None) -> dict:
    """Headline numbers of one fit. Wall time is left out so the result is reproducible."""
    s = summarize_hstar(output.hstar, output.H, H0)
    out = {
        "H": output.H,
        "n_kept": output.n_kept,
        "hstar_mode": s.mode,
        "hstar_mode_tied": s.mode_tied,
        "hstar_pmf": [float(v) for v in s.pmf],
        "hstar_q05_q95": list(s.quantiles()),
        "ordinate": s.ordinate,
        "H0": H0,
        "acceptance": output.acceptance,
    }
    for name in ("logdet_omega", "frob_inv_omega"):
        x = getattr(output, name)
        out[f"ess_{name}"] = ess(x) if x.size >= 100 else None
        out[f"ess_rate_{name}"] = out[f"ess_{name}"] / x.size if out[f"ess_{name}"] else None
    out["mse_omega"] = (
        mse_omega(output.beta_draws, output.sigma2_draws, Omega0)
        if Omega0 is not None and output.beta_draws is not None
        else None
    )
    return out


def write_summary(summary: dict, path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path
