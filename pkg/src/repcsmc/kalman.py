"""Exact inference for linear-Gaussian state-space models.

Kalman filter, RTS smoother, forward-filtering backward-sampling and the
predictive densities ``p(x_{t+1} | y_{1:t})``. Everything here is exact and
serves both as a building block (the Monte Carlo predictive estimator) and as
ground truth for the samplers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import GaussianDensity, gaussian_logpdf, whitened_logpdf


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


@dataclass(frozen=True)
class LgssmParams:
    """x_1 ~ N(mu1, Sigma1), x_t = Phi x_{t-1} + N(0, Sigma), y_t = C x_t + N(0, R)."""

    Phi: np.ndarray
    Sigma: np.ndarray
    Sigma1: np.ndarray
    C: np.ndarray
    R: np.ndarray
    T: int
    mu1: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("Phi", "Sigma", "Sigma1", "C", "R"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        d = self.Phi.shape[0]
        mu1 = np.zeros(d) if self.mu1 is None else np.asarray(self.mu1, dtype=float)
        object.__setattr__(self, "mu1", mu1)
        if self.T < 1:
            raise ValueError("T must be positive")
        if self.Phi.shape != (d, d) or self.Sigma.shape != (d, d) or self.Sigma1.shape != (d, d):
            raise ValueError("Phi, Sigma and Sigma1 must be d x d")
        if self.C.shape[1] != d or self.R.shape != (self.C.shape[0],) * 2:
            raise ValueError("C must be m x d and R m x m")
        for name in ("Sigma", "Sigma1", "R"):
            a = getattr(self, name)
            if not np.allclose(a, a.T) or np.linalg.eigvalsh(a).min() <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")

    @property
    def d(self) -> int:
        return self.Phi.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class FilterResult:
    """Per-time filtering output.

    ``pred_means[t]``/``pred_covs[t]`` describe ``x_t | y_{1:t-1}`` (the prior
    at ``t = 0``), so the one-step predictive of ``x_{t+1} | y_{1:t}`` sits at
    index ``t + 1``. ``log_liks[t]`` is ``log p(y_{1:t+1})``.
    """

    means: np.ndarray
    covs: np.ndarray
    pred_means: np.ndarray
    pred_covs: np.ndarray
    log_liks: np.ndarray

    @property
    def log_likelihood(self) -> float:
        return float(self.log_liks[-1])

    @property
    def T(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class SmootherResult:
    means: np.ndarray
    covs: np.ndarray


def kalman_filter(params: LgssmParams, y) -> FilterResult:
    y = np.asarray(y, dtype=float).reshape(params.T, -1)
    if y.shape[1] != params.m:
        raise ValueError(f"observation dimension {y.shape[1]} != {params.m}")
    T, d = params.T, params.d
    C, R, Phi, Sigma = params.C, params.R, params.Phi, params.Sigma
    means = np.empty((T, d))
    covs = np.empty((T, d, d))
    pred_means = np.empty((T, d))
    pred_covs = np.empty((T, d, d))
    log_liks = np.empty(T)
    m, P = params.mu1, params.Sigma1
    total = 0.0
    for t in range(T):
        if t > 0:
            m = Phi @ means[t - 1]
            P = _sym(Phi @ covs[t - 1] @ Phi.T + Sigma)
        pred_means[t], pred_covs[t] = m, P
        S = _sym(C @ P @ C.T + R)
        try:
            innov = GaussianDensity(C @ m, S)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"innovation covariance not positive definite at t={t}") from exc
        total += float(gaussian_logpdf(y[t], innov))
        log_liks[t] = total
        gain = np.linalg.solve(S, C @ P).T
        means[t] = m + gain @ (y[t] - C @ m)
        covs[t] = _sym(P - gain @ S @ gain.T)
    return FilterResult(means, covs, pred_means, pred_covs, log_liks)


def _smoother_gains(f: FilterResult, params: LgssmParams) -> np.ndarray:
    # J_t = P_t Phi^T (P_{t+1|t})^{-1}
    return np.stack([np.linalg.solve(f.pred_covs[t + 1], params.Phi @ f.covs[t]).T for t in range(f.T - 1)])


def rts_smoother(f: FilterResult, params: LgssmParams) -> SmootherResult:
    T = f.T
    means = f.means.copy()
    covs = f.covs.copy()
    if T > 1:
        gains = _smoother_gains(f, params)
        for t in range(T - 2, -1, -1):
            J = gains[t]
            means[t] = f.means[t] + J @ (means[t + 1] - f.pred_means[t + 1])
            covs[t] = _sym(f.covs[t] + J @ (covs[t + 1] - f.pred_covs[t + 1]) @ J.T)
    return SmootherResult(means, covs)


def ffbs_sample(f: FilterResult, params: LgssmParams, rng: np.random.Generator, size=None) -> np.ndarray:
    """Exact draws from p(x_{1:T} | y_{1:T}); shape ``(T, d)`` or ``(size, T, d)``."""
    n = 1 if size is None else int(size)
    T, d = f.T, params.d
    out = np.empty((n, T, d))
    out[:, -1] = GaussianDensity(f.means[-1], f.covs[-1]).sample(rng, n)
    if T > 1:
        gains = _smoother_gains(f, params)
        for t in range(T - 2, -1, -1):
            J = gains[t]
            cov = _sym(f.covs[t] - J @ f.pred_covs[t + 1] @ J.T)
            mean = f.means[t] + (out[:, t + 1] - f.pred_means[t + 1]) @ J.T
            chol = np.linalg.cholesky(cov)
            out[:, t] = mean + rng.standard_normal((n, d)) @ chol.T
    return out[0] if size is None else out


def predictive_density(f: FilterResult, t: int) -> GaussianDensity:
    """Density of x_{t+1} | y_{1:t} for 0 <= t <= T-2."""
    if not 0 <= t <= f.T - 2:
        raise IndexError(f"predictive index {t} outside [0, {f.T - 2}]")
    return GaussianDensity(f.pred_means[t + 1], f.pred_covs[t + 1])


def predictive_logpdf(f: FilterResult, t: int, x) -> np.ndarray:
    """log p(x_{t+1} = x | y_{1:t}); ``x`` may be a batch of shape ``(..., d)``."""
    return gaussian_logpdf(x, predictive_density(f, t))


class PredictiveTable:
    """Cached predictive densities for repeated evaluation inside samplers."""

    def __init__(self, f: FilterResult):
        self.densities = [predictive_density(f, t) for t in range(f.T - 1)]

    def __call__(self, t: int, x) -> np.ndarray:
        g = self.densities[t]
        return whitened_logpdf(np.asarray(x, dtype=float) - g.mean, g.chol_inv, g.log_det)


def exact_log_bif(params: LgssmParams, y, t: int, x) -> np.ndarray:
    """log p(y_{t+1:T} | x_t = x) via the filter/smoother identity.

    Uses log p(y_{1:T}) + log p(x_t | y_{1:T}) - log p(y_{1:t}) - log p(x_t | y_{1:t}).
    At ``t = T-1`` (the last time) the result is exactly 0.
    """
    f = kalman_filter(params, y)
    if t == f.T - 1:
        return np.zeros(np.shape(x)[:-1])
    s = rts_smoother(f, params)
    return (
        f.log_likelihood
        + gaussian_logpdf(x, GaussianDensity(s.means[t], s.covs[t]))
        - f.log_liks[t]
        - gaussian_logpdf(x, GaussianDensity(f.means[t], f.covs[t]))
    )
