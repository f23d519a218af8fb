"""Gaussian machinery, log-space categorical sampling and the model/proposal contracts.

Array conventions used throughout the package: a batch of states is an array
of shape ``(..., d)`` and every log-density returns an array of the leading
shape ``(...)``. Time indices are 0-based (``t = 0`` is the first observation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def logsumexp(a, axis=None):
    """log(sum(exp(a))) along ``axis`` with max subtraction; all ``-inf`` gives ``-inf``."""
    a = np.asarray(a, dtype=float)
    if axis is not None and a.shape[axis] == 1:
        return np.take(a, 0, axis=axis)
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out[()] if out.ndim == 0 else out


class DegenerateWeightsError(FloatingPointError):
    """All log-weights are -inf, so no categorical draw is possible."""

    def __init__(self, message: str = "degenerate weights", t: Optional[int] = None):
        if t is not None:
            message = f"{message} at t={t}"
        super().__init__(message)
        self.t = t


def _cholesky(cov: np.ndarray, what: str = "covariance") -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"{what} is not positive definite") from exc


@dataclass(frozen=True, eq=False)
class GaussianDensity:
    """Multivariate normal with a cached Cholesky factorization.

    ``chol`` is the lower factor ``L`` of the covariance and ``chol_inv`` its
    inverse, so that a whitened residual is ``(x - mean) @ chol_inv.T``.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)
    chol_inv: np.ndarray = field(init=False, repr=False)
    log_det: float = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        chol = _cholesky(cov) if mean.size else np.zeros((0, 0))
        chol_inv = np.linalg.inv(chol) if mean.size else np.zeros((0, 0))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "chol_inv", chol_inv)
        object.__setattr__(self, "log_det", float(2.0 * np.sum(np.log(np.diag(chol)))))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def precision(self) -> np.ndarray:
        return self.chol_inv.T @ self.chol_inv

    def logpdf(self, x) -> np.ndarray:
        return gaussian_logpdf(x, self)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
        z = rng.standard_normal(shape + (self.dim,))
        return self.mean + z @ self.chol.T


def whitened_logpdf(diff: np.ndarray, chol_inv: np.ndarray, log_det: float) -> np.ndarray:
    """Gaussian log-density of residuals ``diff`` (shape ``(..., d)``)."""
    z = diff @ chol_inv.T
    d = chol_inv.shape[0]
    return -0.5 * (np.einsum("...i,...i->...", z, z) + d * LOG_2PI + log_det)


def gaussian_logpdf(x, g: GaussianDensity) -> np.ndarray:
    """log N(x; g.mean, g.cov), broadcasting over the leading axes of ``x``."""
    x = np.asarray(x, dtype=float)
    out = whitened_logpdf(x - g.mean, g.chol_inv, g.log_det)
    return out[()] if out.ndim == 0 else out


def gaussian_product(g1: GaussianDensity, g2: GaussianDensity) -> tuple[GaussianDensity, float]:
    """Product of two Gaussian densities in the same variable.

    Returns ``(g, log_scale)`` with ``N(x; g1) N(x; g2) = exp(log_scale) N(x; g)``
    for every ``x``; ``log_scale = log N(mean1; mean2, cov1 + cov2)``.
    """
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    return gaussian_partial_product(g1, g2)


def gaussian_partial_product(g_full: GaussianDensity, g_sub: GaussianDensity) -> tuple[GaussianDensity, float]:
    """Multiply a d-dimensional Gaussian by a p-dimensional one on coordinates ``0..p-1``.

    Only the leading ``p x p`` block of the precision is updated. The scale
    factor is the marginal density of the leading block of ``g_full``
    evaluated under ``g_sub``, i.e. ``log N(mean_full[:p]; mean_sub, cov_full[:p,:p] + cov_sub)``.
    """
    d, p = g_full.dim, g_sub.dim
    if p > d:
        raise ValueError(f"factor dimension {p} exceeds state dimension {d}")
    if p == 0:
        return g_full, 0.0
    prec = g_full.precision.copy()
    prec_sub = g_sub.precision
    prec[:p, :p] += prec_sub
    info = g_full.precision @ g_full.mean
    info[:p] += prec_sub @ g_sub.mean
    try:
        cov = np.linalg.inv(_cholesky(0.5 * (prec + prec.T), "combined precision"))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular combined precision") from exc
    cov = cov.T @ cov
    mean = cov @ info
    marginal = GaussianDensity(g_sub.mean, g_full.cov[:p, :p] + g_sub.cov)
    return GaussianDensity(mean, cov), float(gaussian_logpdf(g_full.mean[:p], marginal))


def normalize_log_weights(log_weights) -> np.ndarray:
    """Normalized probabilities from log-weights, subtracting the max first."""
    lw = np.asarray(log_weights, dtype=float)
    assert not np.isnan(lw).any(), "NaN log-weight"
    top = lw.max()
    if not np.isfinite(top):
        raise DegenerateWeightsError()
    w = np.exp(lw - top)
    return w / w.sum()


def categorical_sample(log_weights, rng: np.random.Generator, size=None):
    """Draw index ``i`` with probability proportional to ``exp(log_weights[i])``.

    With ``size`` given, returns an integer array of independent draws.
    Raises :class:`DegenerateWeightsError` when every entry is ``-inf``.
    """
    lw = np.asarray(log_weights, dtype=float)
    top = lw.max()
    if not top > -np.inf:
        assert not np.isnan(top), "NaN log-weight"
        raise DegenerateWeightsError()
    assert not np.isnan(top), "NaN log-weight"
    cdf = np.exp(lw - top).cumsum()
    idx = cdf.searchsorted(rng.random(size) * cdf[-1], side="right")
    # u * total can round up to total: fall back to the last positive entry
    if np.max(idx) >= len(cdf):
        idx = np.minimum(idx, int(np.flatnonzero(lw > -np.inf)[-1]))
    return int(idx) if size is None else idx


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Finite mixture ``sum_j exp(log_weight_j) N(x; density_j)`` (weights unnormalized)."""

    log_weights: np.ndarray
    components: Sequence[GaussianDensity]

    def __post_init__(self):
        lw = np.atleast_1d(np.asarray(self.log_weights, dtype=float))
        if lw.size == 0 or lw.size != len(self.components):
            raise ValueError("mixture needs one log-weight per component and at least one component")
        if not np.isfinite(lw.max()):
            raise ValueError("mixture has no component with finite weight")
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def from_pairs(cls, pairs) -> "GaussianMixture":
        lws, comps = zip(*pairs)
        return cls(np.array(lws, dtype=float), comps)

    def logpdf(self, x) -> np.ndarray:
        lw = self.log_weights - logsumexp(self.log_weights)
        terms = [lw[j] + c.logpdf(x) for j, c in enumerate(self.components) if lw[j] > -np.inf]
        return logsumexp(np.stack(terms), axis=0)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return sample_gaussian_mixture(self, rng)


def sample_gaussian_mixture(mix: GaussianMixture, rng: np.random.Generator) -> np.ndarray:
    j = categorical_sample(mix.log_weights, rng)
    return mix.components[j].sample(rng)


class StateSpaceModel:
    """Contract for a state-space model with stored observations ``y`` (shape ``(T, m)``).

    Subclasses provide vectorized densities: ``x`` and ``x_prev`` are arrays
    of shape ``(..., d)`` that broadcast against each other.
    """

    d: int
    m: int
    T: int
    y: Optional[np.ndarray] = None

    def sample_initial(self, rng: np.random.Generator, size=None) -> np.ndarray:
        raise NotImplementedError

    def log_initial(self, x) -> np.ndarray:
        raise NotImplementedError

    def sample_transition(self, x_prev, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def log_transition(self, x_prev, x) -> np.ndarray:
        raise NotImplementedError

    def log_observation(self, t: int, x) -> np.ndarray:
        raise NotImplementedError

    def sample_observation(self, x, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def with_data(self, y) -> "StateSpaceModel":
        """Return a copy of the model bound to observations ``y``."""
        raise NotImplementedError

    def simulate(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Forward-simulate a latent path (``T x d``) and observations (``T x m``)."""
        x = np.empty((self.T, self.d))
        x[0] = self.sample_initial(rng)
        for t in range(1, self.T):
            x[t] = self.sample_transition(x[t - 1], rng)
        return x, self.sample_observation(x, rng)

    def log_joint(self, path) -> float:
        """log p(x_{1:T}, y_{1:T}) of a single path."""
        path = np.asarray(path, dtype=float)
        total = self.log_initial(path[0]) + np.sum(self.log_transition(path[:-1], path[1:]))
        return float(total + sum(self.log_observation(t, path[t]) for t in range(self.T)))

    def bootstrap_proposal(self) -> "Proposal":
        return BootstrapProposal(self)


class Proposal:
    """Proposal sequence q_1(x_1), q_t(x_t | x_{t-1}); ``x_prev`` is ignored at ``t = 0``."""

    def sample(self, t: int, x_prev, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def logpdf(self, t: int, x_prev, x) -> np.ndarray:
        raise NotImplementedError


class BootstrapProposal(Proposal):
    """q_1 = mu and q_t = f, the model's own prior dynamics."""

    def __init__(self, model: StateSpaceModel):
        self.model = model

    def sample(self, t, x_prev, rng, size):
        if t == 0:
            return self.model.sample_initial(rng, size)
        return self.model.sample_transition(x_prev, rng)

    def logpdf(self, t, x_prev, x):
        if t == 0:
            return self.model.log_initial(x)
        return self.model.log_transition(x_prev, x)
