"""MCMC output analysis: autocorrelation time, standard errors, oracle coverage, mixture-weight variance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AcfResult:
    """Autocorrelations ``rho[m]`` (``rho[0] == 1``), cutoff lag ``M`` and time ``tau``."""

    rho: np.ndarray
    M: int
    tau: float


def _as_runs(runs) -> np.ndarray:
    arr = np.asarray(runs, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("runs must be a list of equal-length scalar series")
    return arr


def pooled_autocovariance(runs, max_lag: int) -> np.ndarray:
    """Autocovariances around the mean of all runs, computed per run and averaged."""
    x = _as_runs(runs)
    L = x.shape[1]
    centred = x - x.mean()
    n_fft = 1 << int(np.ceil(np.log2(2 * L)))
    fx = np.fft.rfft(centred, n=n_fft, axis=1)
    acov = np.fft.irfft(fx * np.conj(fx), n=n_fft, axis=1)[:, : max_lag + 1] / L
    return acov.mean(axis=0)


def iact(runs) -> AcfResult:
    """Integrated autocorrelation time 1 + 2 sum_{m=1}^{M} rho_m from several runs of one variable.

    The overall mean is estimated from all runs, autocovariances are computed
    per run around it and averaged. ``M`` is the first lag whose
    autocorrelation drops below ``2 / sqrt(L * n_runs)``, capped at ``L // 10``.
    """
    x = _as_runs(runs)
    n_runs, L = x.shape
    if L < 10:
        raise ValueError("need series of length >= 10")
    max_lag = max(L // 10, 1)
    acov = pooled_autocovariance(x, max_lag)
    if not acov[0] > 1e-12 * max(1.0, float(np.mean(x**2))):
        raise ValueError("zero-variance series: autocorrelation time undefined")
    rho = acov / acov[0]
    threshold = 2.0 / np.sqrt(L * n_runs)
    below = np.flatnonzero(rho[1:] < threshold)
    M = int(below[0]) + 1 if below.size else max_lag
    tau = 1.0 + 2.0 * float(rho[1 : M + 1].sum())
    return AcfResult(rho, M, tau)


def iact_table(traces, burn_in_fraction: float = 0.1) -> np.ndarray:
    """IACT for every tracked variable; ``traces`` has shape ``(n_runs, n_iter, n_vars)``."""
    traces = discard_burn_in(traces, burn_in_fraction)
    return np.array([iact(traces[:, :, v]).tau for v in range(traces.shape[2])])


def discard_burn_in(traces, burn_in_fraction: float = 0.1) -> np.ndarray:
    traces = np.asarray(traces, dtype=float)
    if not 0 <= burn_in_fraction < 1:
        raise ValueError("burn_in_fraction must lie in [0, 1)")
    return traces[:, int(burn_in_fraction * traces.shape[1]) :]


def overall_mean_se(runs) -> tuple:
    """Mean of per-run means and its standard error sd(run means) / sqrt(n_runs).

    ``runs`` has shape ``(n_runs, n_iter)`` or ``(n_runs, n_iter, n_vars)``.
    """
    x = np.asarray(runs, dtype=float)
    if x.ndim < 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 runs for a standard error")
    run_means = x.mean(axis=1)
    return run_means.mean(axis=0), run_means.std(axis=0, ddof=1) / np.sqrt(x.shape[0])


def coverage_check(mcmc_runs, oracle_means) -> float:
    """Fraction of variables whose oracle mean lies within two standard errors of the MCMC mean."""
    x = np.asarray(mcmc_runs, dtype=float)
    oracle = np.asarray(oracle_means, dtype=float).ravel()
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[2] != oracle.size:
        raise ValueError(f"traces with {x.shape[-1]} variables do not align with {oracle.size} oracle values")
    mean, se = overall_mean_se(x)
    return float(np.mean(np.abs(oracle - mean) <= 2.0 * se))


def mixture_weight_variance(mu: float, sigma0_sq: float, sigma1_sq: float) -> float:
    """Var(1 / p(x)) for x ~ N(0, sigma1_sq) and p the N(mu, sigma0_sq) density (closed form).

    Finite only when sigma0_sq > 2 sigma1_sq.
    """
    nu1 = 1.0 / (2.0 * sigma1_sq) - 1.0 / sigma0_sq
    nu2 = 1.0 / sigma1_sq - 1.0 / sigma0_sq
    if not (sigma1_sq > 0 and nu1 > 0):
        raise ValueError("infinite variance: need sigma0_sq > 2 * sigma1_sq")
    mu2 = mu * mu
    second = 2.0 * np.pi * sigma0_sq / np.sqrt(2.0 * sigma1_sq * nu1) * np.exp(mu2 * (1.0 / sigma0_sq + 1.0 / (sigma0_sq**2 * nu1)))
    first_sq = 2.0 * np.pi * sigma0_sq / (sigma1_sq * nu2) * np.exp(mu2 * (1.0 / sigma0_sq + 1.0 / (sigma0_sq**2 * nu2)))
    return float(second - first_sq)
