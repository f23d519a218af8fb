"""Unconditional SMC, the conditional SMC step, backward sampling and the iterated cSMC kernel.

A target is described by an :class:`AuxiliaryTarget`: the unnormalized
log-increment ``log_beta(t, x_prev, x)`` of pi_t / pi_{t-1}, a proposal, and
the incremental importance log-weight ``log_w = log_beta - log q``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BootstrapProposal, DegenerateWeightsError, Proposal, StateSpaceModel, categorical_sample, logsumexp


class AuxiliaryTarget:
    """Sequence of auxiliary targets pi_1, ..., pi_T = pi with a proposal."""

    T: int
    proposal: Proposal

    def log_beta(self, t: int, x_prev, x) -> np.ndarray:
        raise NotImplementedError

    def log_w(self, t: int, x_prev, x) -> np.ndarray:
        return self.log_beta(t, x_prev, x) - self.proposal.logpdf(t, x_prev, x)

    def log_backward(self, t: int, x_prev, x) -> np.ndarray:
        """log_beta(t, x_prev, x) for many ``x_prev`` and one ``x``, up to a constant in ``x_prev``."""
        return self.log_beta(t, x_prev, x)


class DefaultTarget(AuxiliaryTarget):
    """Filtering targets pi_t = p(x_{1:t} | y_{1:t}) of a state-space model."""

    def __init__(self, model: StateSpaceModel, proposal: Proposal | None = None):
        self.model = model
        self.T = model.T
        self.proposal = model.bootstrap_proposal() if proposal is None else proposal
        self._bootstrap = isinstance(self.proposal, BootstrapProposal) and self.proposal.model is model

    def log_beta(self, t, x_prev, x):
        if t == 0:
            return self.model.log_initial(x) + self.model.log_observation(0, x)
        return self.model.log_transition(x_prev, x) + self.model.log_observation(t, x)

    def log_w(self, t, x_prev, x):
        if self._bootstrap:
            # prior dynamics cancel: w_t = g(y_t | x_t)
            return self.model.log_observation(t, x)
        return super().log_w(t, x_prev, x)

    def log_backward(self, t, x_prev, x):
        return self.model.log_transition(x_prev, x)


@dataclass(frozen=True)
class CsmcConfig:
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"conditional SMC needs N >= 2 particles, got {self.N}")


@dataclass
class ParticleSystem:
    """Particle cloud of one cSMC pass.

    ``particles[t, i]`` is x_t^i; ``ancestors[t - 1, i]`` is the index at
    ``t - 1`` of the parent of particle ``i`` at ``t``; ``log_weights[t, i]``
    is log w_t of particle ``i``; ``cond_slots[t]`` is b_t.
    """

    particles: np.ndarray
    ancestors: np.ndarray
    log_weights: np.ndarray
    cond_slots: np.ndarray

    @property
    def N(self) -> int:
        return self.particles.shape[1]

    @property
    def T(self) -> int:
        return self.particles.shape[0]

    def trace(self, index: int) -> np.ndarray:
        """Ancestral path ending at particle ``index`` at the final time."""
        T = self.T
        idx = np.empty(T, dtype=int)
        idx[-1] = index
        for t in range(T - 1, 0, -1):
            idx[t - 1] = self.ancestors[t - 1, idx[t]]
        return self.particles[np.arange(T), idx]


def _check_weights(lw: np.ndarray, t: int) -> None:
    assert not np.isnan(lw).any(), f"NaN incremental weight at t={t}"
    if not np.isfinite(lw.max()):
        raise DegenerateWeightsError(t=t)


def smc_sample(target: AuxiliaryTarget, N: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Standard SMC with multinomial resampling at every step.

    Returns one path traced back from a particle drawn from the final weighted
    cloud, and the log of the unbiased normalizing-constant estimate
    ``sum_t log(mean_i w_t^i)``.
    """
    if N < 1:
        raise ValueError("N must be positive")
    T = target.T
    q = target.proposal
    x = q.sample(0, None, rng, N)
    particles = np.empty((T, N) + x.shape[1:])
    ancestors = np.empty((max(T - 1, 0), N), dtype=np.intp)
    particles[0] = x
    lw = target.log_w(0, None, x)
    _check_weights(lw, 0)
    log_z = logsumexp(lw) - np.log(N)
    for t in range(1, T):
        a = categorical_sample(lw, rng, N)
        ancestors[t - 1] = a
        x_prev = particles[t - 1, a]
        particles[t] = q.sample(t, x_prev, rng, N)
        lw = target.log_w(t, x_prev, particles[t])
        _check_weights(lw, t)
        log_z += logsumexp(lw) - np.log(N)
    sys = ParticleSystem(particles, ancestors, np.empty((0, N)), np.empty(0, dtype=np.intp))
    return sys.trace(categorical_sample(lw, rng)), float(log_z)


def csmc_step(target: AuxiliaryTarget, x_ref, cfg: CsmcConfig, rng: np.random.Generator) -> ParticleSystem:
    """Conditional SMC pass with the reference path pinned at uniformly drawn slots b_t."""
    x_ref = np.asarray(x_ref, dtype=float)
    T, N = target.T, cfg.N
    if x_ref.shape[0] != T:
        raise ValueError(f"reference path has length {x_ref.shape[0]}, target expects {T}")
    q = target.proposal
    particles = np.empty((T, N) + x_ref.shape[1:])
    ancestors = np.empty((max(T - 1, 0), N), dtype=np.intp)
    log_weights = np.empty((T, N))
    cond = np.empty(T, dtype=np.intp)

    # every slot is drawn and slot b_t is then overwritten with the reference
    # state; the free particles have exactly the law of the conditional update
    b = int(rng.integers(N))
    cond[0] = b
    x = q.sample(0, None, rng, N)
    x[b] = x_ref[0]
    particles[0] = x
    lw = target.log_w(0, None, x)
    _check_weights(lw, 0)
    log_weights[0] = lw
    for t in range(1, T):
        b_prev = b
        b = int(rng.integers(N))
        cond[t] = b
        a = categorical_sample(lw, rng, N)
        a[b] = b_prev
        ancestors[t - 1] = a
        x_prev = particles[t - 1, a]
        x = q.sample(t, x_prev, rng, N)
        x[b] = x_ref[t]
        particles[t] = x
        lw = target.log_w(t, x_prev, x)
        _check_weights(lw, t)
        log_weights[t] = lw
    return ParticleSystem(particles, ancestors, log_weights, cond)


def backward_sample(sys: ParticleSystem, target: AuxiliaryTarget, rng: np.random.Generator) -> np.ndarray:
    """Draw a path from the cloud, reweighting each time by beta_{t+1} towards the chosen successor."""
    T = sys.T
    idx = np.empty(T, dtype=np.intp)
    t = T - 1
    try:
        idx[t] = categorical_sample(sys.log_weights[t], rng)
        for t in range(T - 2, -1, -1):
            nxt = sys.particles[t + 1, idx[t + 1]]
            logits = target.log_backward(t + 1, sys.particles[t], nxt) + sys.log_weights[t]
            idx[t] = categorical_sample(logits, rng)
    except DegenerateWeightsError as exc:
        raise DegenerateWeightsError("degenerate backward weights", t=t) from exc
    return sys.particles[np.arange(T), idx].copy()


def iterated_csmc_kernel(target: AuxiliaryTarget, x, cfg: CsmcConfig, rng: np.random.Generator) -> np.ndarray:
    """One pi-invariant Markov transition: cSMC step followed by backward sampling."""
    return backward_sample(csmc_step(target, x, cfg, rng), target, rng)
