"""Benchmark state-space models and their lookahead proposals.

* :class:`LinearGaussianModel` - AR(1) latent process with equicorrelated noise, x observed in N(0, I).
* :class:`PoissonGaussianModel1` / :class:`PoissonGaussianModel2` - same latent process,
  Poisson counts with rate ``exp(c + sigma x)`` or ``sigma |x|``.
* :class:`Lorenz96Model` - RK4-discretized Lorenz-96 SDE, first ``p`` coordinates observed.

The replica proposals are mixtures with one component per other replica. Each
component is the model's prior dynamics N(m(x_prev), S) multiplied by a
linear-Gaussian factor N(z_j; H x, Rz) built from that replica's next state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln, xlogy

from .core import (
    GaussianDensity,
    GaussianMixture,
    Proposal,
    StateSpaceModel,
    gaussian_partial_product,
    gaussian_product,
    logsumexp,
    whitened_logpdf,
)
from .kalman import LgssmParams


def equicorrelation(d: int, rho: float) -> np.ndarray:
    """Unit-variance covariance with all off-diagonal entries equal to ``rho``."""
    if not (rho < 1 and 1 + (d - 1) * rho > 0):
        raise ValueError(f"equicorrelation matrix with d={d}, rho={rho} is not positive definite")
    return (1 - rho) * np.eye(d) + rho * np.ones((d, d))


def stationary_initial_cov(phis: np.ndarray, rho: float) -> np.ndarray:
    s = 1.0 / np.sqrt(1.0 - phis**2)
    return equicorrelation(len(phis), rho) * np.outer(s, s)


def _row_categorical(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a ``(n, J)`` logit array."""
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(cdf))[:, None] * cdf[:, -1:]
    return np.minimum((cdf <= u).sum(axis=1), cdf.shape[1] - 1)


class LookaheadMixtureProposal(Proposal):
    """q_t(x | x_prev) proportional to N(x; m_t(x_prev), S_t) sum_j exp(c_tj) N(z_tj; H x, Rz).

    ``pseudo_obs[t]`` holds the ``J`` vectors z_tj for ``t = 0..T-2`` and
    ``extra_log_weights[t]`` the optional constants c_tj. At the final time the
    proposal is the bare prior dynamics. All covariances are shared across
    particles and components, so the Kalman-update quantities are computed once.
    """

    def __init__(
        self,
        prior_mean: Callable[[int, Optional[np.ndarray]], np.ndarray],
        initial_cov: np.ndarray,
        transition_cov: np.ndarray,
        H: np.ndarray,
        Rz: np.ndarray,
        pseudo_obs: np.ndarray,
        extra_log_weights: Optional[np.ndarray] = None,
        factor_is_transition: bool = False,
        log_predictive=None,
    ):
        # factor_is_transition: N(z_tj; H x, Rz) equals f(x^{(j)}_{t+1} | x) exactly, and
        # extra_log_weights are -log_predictive at those states
        self.factor_is_transition = factor_is_transition
        self._last = None
        self.log_predictive = log_predictive
        self.prior_mean = prior_mean
        self.H = np.atleast_2d(H)
        self.pseudo_obs = np.asarray(pseudo_obs, dtype=float)
        self.T = self.pseudo_obs.shape[0] + 1
        self.extra = None if extra_log_weights is None else np.asarray(extra_log_weights, dtype=float)
        self._parts = [self._update(np.atleast_2d(S), np.atleast_2d(Rz)) for S in (initial_cov, transition_cov)]

    def _update(self, S, Rz):
        H = self.H
        innov = GaussianDensity(np.zeros(H.shape[0]), H @ S @ H.T + Rz)
        gain = np.linalg.solve(innov.cov, H @ S).T
        post = S - gain @ innov.cov @ gain.T
        return {
            "prior": GaussianDensity(np.zeros(S.shape[0]), S),
            "innov": innov,
            "gain": gain,
            "post": GaussianDensity(np.zeros(S.shape[0]), 0.5 * (post + post.T)),
        }

    def _means(self, t, x_prev, n):
        m = self.prior_mean(t, x_prev)
        return np.broadcast_to(m, (n, m.shape[-1])) if m.ndim == 1 else m

    def _component_terms(self, t, m1, with_means=True):
        part = self._parts[t > 0]
        innov = part["innov"]
        resid = self.pseudo_obs[t][None, :, :] - (m1 @ self.H.T)[:, None, :]
        logits = whitened_logpdf(resid, innov.chol_inv, innov.log_det)
        if self.extra is not None:
            logits = logits + self.extra[t]
        means = m1[:, None, :] + resid @ part["gain"].T if with_means else None
        return part, logits, means

    def log_normalizer(self, t, x_prev, n) -> np.ndarray:
        """log of sum_j exp(c_tj) N(z_tj; H m_t, H S_t H^T + Rz); 0 at the final time."""
        if t == self.T - 1:
            return np.zeros(n)
        cached = self._last
        if cached is not None and cached[0] == t and cached[1] is x_prev and len(cached[2]) == n:
            logits = cached[2]
        else:
            _, logits, _ = self._component_terms(t, self._means(t, x_prev, n), with_means=False)
        return logsumexp(logits, axis=1)

    def sample(self, t, x_prev, rng, size):
        m1 = self._means(t, x_prev, size)
        eps = rng.standard_normal(m1.shape)
        if t == self.T - 1:
            return m1 + eps @ self._parts[t > 0]["prior"].chol.T
        part, logits, means = self._component_terms(t, m1)
        self._last = (t, x_prev, logits)
        j = _row_categorical(logits, rng) if logits.shape[1] > 1 else np.zeros(size, dtype=np.intp)
        return means[np.arange(size), j] + eps @ part["post"].chol.T

    def logpdf(self, t, x_prev, x):
        x = np.asarray(x, dtype=float)
        m1 = self._means(t, x_prev, x.shape[0])
        if t == self.T - 1:
            prior = self._parts[t > 0]["prior"]
            return whitened_logpdf(x - m1, prior.chol_inv, prior.log_det)
        part, logits, means = self._component_terms(t, m1)
        post = part["post"]
        comp = whitened_logpdf(x[:, None, :] - means, post.chol_inv, post.log_det)
        return logsumexp(logits + comp, axis=1) - logsumexp(logits, axis=1)

    def mixture(self, t: int, x_prev) -> GaussianMixture:
        """The proposal at one ``x_prev`` as an explicit :class:`GaussianMixture`."""
        m1 = self._means(t, None if t == 0 else np.atleast_2d(x_prev), 1)
        if t == self.T - 1:
            return GaussianMixture([0.0], [GaussianDensity(m1[0], self._parts[t > 0]["prior"].cov)])
        part, logits, means = self._component_terms(t, m1)
        return GaussianMixture(logits[0], [GaussianDensity(mu, part["post"].cov) for mu in means[0]])


@dataclass(frozen=True, eq=False)
class _ARLatentModel(StateSpaceModel):
    """Latent x_1 ~ N(0, Sigma1), x_t = diag(phis) x_{t-1} + N(0, Sigma) with equicorrelated Sigma."""

    d: int
    T: int
    rho: float
    phis: np.ndarray
    y: Optional[np.ndarray] = None
    _init: GaussianDensity = field(init=False, repr=False)
    _trans: GaussianDensity = field(init=False, repr=False)

    def __post_init__(self):
        phis = np.broadcast_to(np.asarray(self.phis, dtype=float), (self.d,)).copy()
        if np.any(np.abs(phis) >= 1):
            raise ValueError("AR coefficients must satisfy |phi| < 1")
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "_init", GaussianDensity(np.zeros(self.d), stationary_initial_cov(phis, self.rho)))
        object.__setattr__(self, "_trans", GaussianDensity(np.zeros(self.d), equicorrelation(self.d, self.rho)))
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).reshape(self.T, -1)
            object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.d

    @property
    def Phi(self) -> np.ndarray:
        return np.diag(self.phis)

    @property
    def Sigma(self) -> np.ndarray:
        return self._trans.cov

    @property
    def Sigma1(self) -> np.ndarray:
        return self._init.cov

    def with_data(self, y):
        return replace(self, y=y)

    def sample_initial(self, rng, size=None):
        return self._init.sample(rng, size)

    def log_initial(self, x):
        return whitened_logpdf(np.asarray(x, dtype=float), self._init.chol_inv, self._init.log_det)

    def transition_mean(self, x_prev):
        return np.asarray(x_prev, dtype=float) * self.phis

    def sample_transition(self, x_prev, rng):
        m = self.transition_mean(x_prev)
        return m + rng.standard_normal(m.shape) @ self._trans.chol.T

    def log_transition(self, x_prev, x):
        diff = np.asarray(x, dtype=float) - self.transition_mean(x_prev)
        return whitened_logpdf(diff, self._trans.chol_inv, self._trans.log_det)

    def replica_proposal(self, others, log_predictive=None) -> LookaheadMixtureProposal:
        """Mixture proposal built from the other replicas' paths (shape ``(J, T, d)``).

        Component j multiplies the prior dynamics by f(x^{(j)}_{t+1} | x_t) seen as a
        function of x_t; with ``log_predictive`` each component weight is divided
        by the predictive density at x^{(j)}_{t+1}.
        """
        others = np.asarray(others, dtype=float)
        z = np.swapaxes(others[:, 1:, :], 0, 1)
        extra = None
        if log_predictive is not None:
            extra = -np.stack([log_predictive(t, z[t]) for t in range(self.T - 1)])

        def prior_mean(t, x_prev):
            return self._init.mean if t == 0 else self.transition_mean(x_prev)

        return LookaheadMixtureProposal(
            prior_mean, self.Sigma1, self.Sigma, self.Phi, self.Sigma, z, extra,
            factor_is_transition=True, log_predictive=log_predictive,
        )


class LinearGaussianModel(_ARLatentModel):
    """Latent AR process observed as y_t = x_t + N(0, I)."""

    def lgssm_params(self) -> LgssmParams:
        return LgssmParams(self.Phi, self.Sigma, self.Sigma1, np.eye(self.d), np.eye(self.d), self.T)

    def log_observation(self, t, x):
        diff = np.asarray(x, dtype=float) - self.y[t]
        return -0.5 * (np.einsum("...i,...i->...", diff, diff) + self.d * np.log(2 * np.pi))

    def sample_observation(self, x, rng):
        return x + rng.standard_normal(np.shape(x))


def _poisson_constant(y: np.ndarray) -> np.ndarray:
    return gammaln(y + 1).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class PoissonGaussianModel1(_ARLatentModel):
    """y_{i,t} ~ Poisson(exp(c + sigma x_{i,t}))."""

    c: float = -0.4
    sigma: float = 0.6

    def log_observation(self, t, x):
        eta = self.c + self.sigma * np.asarray(x, dtype=float)
        return np.sum(self.y[t] * eta - np.exp(eta), axis=-1) - _poisson_constant(self.y[t])

    def sample_observation(self, x, rng):
        return rng.poisson(np.exp(self.c + self.sigma * np.asarray(x))).astype(float)


@dataclass(frozen=True, eq=False)
class PoissonGaussianModel2(_ARLatentModel):
    """y_{i,t} ~ Poisson(sigma |x_{i,t}|); rate 0 with a positive count has log-density -inf."""

    sigma: float = 0.8

    def log_observation(self, t, x):
        rate = self.sigma * np.abs(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore"):
            return np.sum(xlogy(self.y[t], rate) - rate, axis=-1) - _poisson_constant(self.y[t])

    def sample_observation(self, x, rng):
        return rng.poisson(self.sigma * np.abs(np.asarray(x))).astype(float)


def lorenz_drift(x, alpha: float) -> np.ndarray:
    """Lorenz-96 drift -x_{i-1} x_{i-2} + x_{i-1} x_{i+1} - x_i + alpha, indices modulo d."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 4:
        raise ValueError("Lorenz-96 needs d >= 4")
    xm1 = np.roll(x, 1, axis=-1)
    return -xm1 * np.roll(x, 2, axis=-1) + xm1 * np.roll(x, -1, axis=-1) - x + alpha


def rk4_integrate(drift: Callable[[np.ndarray], np.ndarray], x, total: float, step: float) -> np.ndarray:
    """Classical fixed-step RK4 over a signed duration; negative ``total`` runs the flow backward."""
    if step <= 0:
        raise ValueError("step must be positive")
    n_float = abs(total) / step
    n = int(round(n_float))
    if abs(n - n_float) > 1e-9 * max(1.0, n_float):
        raise ValueError(f"duration {total} is not an integral number of steps of size {step}")
    dt = np.copysign(step, total)
    x = np.array(x, dtype=float)
    for _ in range(n):
        k1 = drift(x)
        k2 = drift(x + 0.5 * dt * k1)
        k3 = drift(x + 0.5 * dt * k2)
        k4 = drift(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


@dataclass(frozen=True, eq=False)
class Lorenz96Model(StateSpaceModel):
    """x_1 ~ N(0, sigma_f_sq I), x_t ~ N(u(x_{t-1}), sigma_f_sq h I), y_t ~ N(x_t[:p], obs_var I_p).

    ``u`` integrates the drift over ``[0, h]`` with RK4 steps of size ``rk4_step``.
    """

    d: int = 16
    T: int = 100
    alpha: float = 4.8801
    sigma_f_sq: float = 1e-2
    obs_var: float = 1e-3
    h: float = 0.1
    rk4_step: float = 1e-2
    p: Optional[int] = None
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        p = self.d - 2 if self.p is None else int(self.p)
        if not 0 <= p <= self.d:
            raise ValueError("need 0 <= p <= d")
        n = self.h / self.rk4_step
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("h / rk4_step must be a positive integer")
        object.__setattr__(self, "p", p)
        if self.y is not None:
            object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(self.T, p))

    @property
    def m(self) -> int:
        return self.p

    @property
    def H(self) -> np.ndarray:
        return np.eye(self.p, self.d)

    @property
    def transition_var(self) -> float:
        return self.sigma_f_sq * self.h

    def with_data(self, y):
        return replace(self, y=y)

    def drift(self, x):
        return lorenz_drift(x, self.alpha)

    def flow(self, x):
        return rk4_integrate(self.drift, x, self.h, self.rk4_step)

    def inverse_flow(self, x):
        return rk4_integrate(self.drift, x, -self.h, self.rk4_step)

    def _iso_logpdf(self, diff, var):
        diff = np.asarray(diff, dtype=float)
        k = diff.shape[-1]
        return -0.5 * (np.einsum("...i,...i->...", diff, diff) / var + k * np.log(2 * np.pi * var))

    def sample_initial(self, rng, size=None):
        shape = (self.d,) if size is None else (size, self.d)
        return np.sqrt(self.sigma_f_sq) * rng.standard_normal(shape)

    def log_initial(self, x):
        return self._iso_logpdf(x, self.sigma_f_sq)

    def sample_transition(self, x_prev, rng):
        m = self.flow(x_prev)
        return m + np.sqrt(self.transition_var) * rng.standard_normal(m.shape)

    def log_transition(self, x_prev, x):
        return self._iso_logpdf(np.asarray(x, dtype=float) - self.flow(x_prev), self.transition_var)

    def log_observation(self, t, x):
        return self._iso_logpdf(np.asarray(x, dtype=float)[..., : self.p] - self.y[t], self.obs_var)

    def sample_observation(self, x, rng):
        x = np.asarray(x, dtype=float)
        return x[..., : self.p] + np.sqrt(self.obs_var) * rng.standard_normal(x.shape[:-1] + (self.p,))

    def replica_proposal(self, others, log_predictive=None) -> LookaheadMixtureProposal:
        """Mixture proposal whose factors centre the observed coordinates on u^{-1}(x^{(j)}_{t+1}).

        The backward RK4 map is evaluated once per (replica, t) at build time.
        """
        others = np.asarray(others, dtype=float)
        back = self.inverse_flow(others[:, 1:, :])[..., : self.p]
        z = np.swapaxes(back, 0, 1)
        v = self.transition_var

        def prior_mean(t, x_prev):
            return np.zeros(self.d) if t == 0 else self.flow(x_prev)

        return LookaheadMixtureProposal(
            prior_mean, self.sigma_f_sq * np.eye(self.d), v * np.eye(self.d), self.H, v * np.eye(self.p), z
        )


def lg_mixture_proposal(model: _ARLatentModel, k: int, ensemble, t: int, x_prev=None, log_predictive=None) -> GaussianMixture:
    """Proposal for replica ``k`` at time ``t`` as an explicit mixture, built by completing the square.

    f(x^{(j)}_{t+1} | x_t) as a function of x_t is proportional to
    N(x_t; Phi^{-1} x^{(j)}_{t+1}, Phi^{-1} Sigma Phi^{-T}); each component is the
    product of that factor with the prior dynamics. With ``Phi = 0`` the
    factor is constant in x_t and the proposal is the prior dynamics.
    """
    ensemble = np.asarray(ensemble, dtype=float)
    T = ensemble.shape[1]
    prior = GaussianDensity(
        np.zeros(model.d) if t == 0 else model.transition_mean(x_prev),
        model.Sigma1 if t == 0 else model.Sigma,
    )
    if t == T - 1 or not np.any(model.phis):
        return GaussianMixture([0.0], [prior])
    if np.any(model.phis == 0):
        raise np.linalg.LinAlgError("partially singular Phi: reversed transition factor is not a density in x_t")
    phi_inv = np.diag(1.0 / model.phis)
    rev_cov = phi_inv @ model.Sigma @ phi_inv.T
    pairs = []
    for j in range(ensemble.shape[0]):
        if j == k:
            continue
        z = ensemble[j, t + 1]
        comp, log_scale = gaussian_product(prior, GaussianDensity(phi_inv @ z, rev_cov))
        if log_predictive is not None:
            log_scale -= float(log_predictive(t, z))
        pairs.append((log_scale, comp))
    return GaussianMixture.from_pairs(pairs)


def lorenz_mixture_proposal(model: Lorenz96Model, k: int, ensemble, t: int, x_prev=None) -> GaussianMixture:
    """Lorenz proposal for replica ``k`` as an explicit mixture of partial products."""
    ensemble = np.asarray(ensemble, dtype=float)
    T = ensemble.shape[1]
    v = model.transition_var
    if t == 0:
        prior = GaussianDensity(np.zeros(model.d), model.sigma_f_sq * np.eye(model.d))
    else:
        prior = GaussianDensity(model.flow(x_prev), v * np.eye(model.d))
    if t == T - 1 or model.p == 0:
        return GaussianMixture([0.0], [prior])
    pairs = []
    for j in range(ensemble.shape[0]):
        if j == k:
            continue
        back = model.inverse_flow(ensemble[j, t + 1])[: model.p]
        comp, log_scale = gaussian_partial_product(prior, GaussianDensity(back, v * np.eye(model.p)))
        pairs.append((log_scale, comp))
    return GaussianMixture.from_pairs(pairs)


MODEL_KINDS = {
    "lgssm": LinearGaussianModel,
    "poisson1": PoissonGaussianModel1,
    "poisson2": PoissonGaussianModel2,
    "lorenz96": Lorenz96Model,
}
