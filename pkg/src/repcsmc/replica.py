"""Replica conditional SMC.

K replicas of the latent path jointly target the product of K smoothing
posteriors. Replica ``k`` is updated by the iterated cSMC kernel run on
auxiliary targets p(x_{1:t} | y_{1:t}) * p_hat(y_{t+1:T} | x_t), where the
backward information filter estimate p_hat is a mixture over the other
replicas' states at time ``t + 1``.
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Proposal, StateSpaceModel, logsumexp
from .csmc import AuxiliaryTarget, CsmcConfig, DefaultTarget, iterated_csmc_kernel, smc_sample

ProposalBuilder = Callable[[StateSpaceModel, np.ndarray, "BifEstimator"], Proposal]

REPLICA_CSMC = "replica_csmc"
ITERATED_CSMC = "iterated_csmc"
FROZEN = "frozen"
UPDATE_KINDS = (REPLICA_CSMC, ITERATED_CSMC, FROZEN)


class BifEstimator:
    """Mixture estimate of p(y_{t+1:T} | x_t) from next-time replica states.

    ``log_predictive(t, x)`` returns log p_hat(x_{t+1} = x | y_{1:t}); ``None``
    means the predictive is replaced by a constant.
    """

    log_predictive: Optional[Callable[[int, np.ndarray], np.ndarray]] = None

    def predictive_terms(self, t: int, next_states: np.ndarray) -> np.ndarray:
        if self.log_predictive is None:
            return np.zeros(len(next_states))
        return np.asarray(self.log_predictive(t, next_states), dtype=float)


class ConstantPredictive(BifEstimator):
    def __repr__(self):
        return "ConstantPredictive()"


class MonteCarloPredictive(BifEstimator):
    def __init__(self, log_predictive: Callable[[int, np.ndarray], np.ndarray]):
        self.log_predictive = log_predictive

    def __repr__(self):
        return "MonteCarloPredictive()"


def bif_log(est: BifEstimator, model: StateSpaceModel, t: int, x_t, next_states) -> np.ndarray:
    """log p_hat(y_{t+1:T} | x_t), up to a constant that does not depend on ``x_t``.

    Returns 0 at the final time ``t = T - 1``.
    """
    x_t = np.asarray(x_t, dtype=float)
    if t == model.T - 1:
        return np.zeros(x_t.shape[:-1])[()]
    next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
    if next_states.shape[0] == 0:
        raise ValueError(f"no replica states supplied at t={t}")
    log_f = model.log_transition(x_t[..., None, :], next_states)
    return logsumexp(log_f - est.predictive_terms(t, next_states), axis=-1)


class ReplicaTarget(AuxiliaryTarget):
    """Auxiliary targets for one replica given a frozen snapshot ``others`` of shape ``(J, T, d)``."""

    def __init__(self, model: StateSpaceModel, proposal: Proposal, est: BifEstimator, others):
        self.model = model
        self.T = model.T
        self.proposal = proposal
        self.est = est
        self.others = np.asarray(others, dtype=float)
        if self.others.ndim != 3 or self.others.shape[0] < 1 or self.others.shape[1] != self.T:
            raise ValueError(f"expected other replicas of shape (J, {self.T}, d), got {self.others.shape}")
        self._pred = [est.predictive_terms(t, self.others[:, t + 1]) for t in range(self.T - 1)]
        # when the proposal mixes exactly f(x^{(j)}_{t+1} | x) with the estimator's own
        # weights, f * p_hat / q collapses to the proposal's normalizer in x_{t-1}
        self.collapsed = (
            getattr(proposal, "factor_is_transition", False)
            and getattr(proposal, "log_predictive", None) is est.log_predictive
            and np.array_equal(getattr(proposal, "pseudo_obs", None), np.swapaxes(self.others[:, 1:], 0, 1))
        )

    def bif(self, t: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if t == self.T - 1:
            return np.zeros(x.shape[:-1])
        log_f = self.model.log_transition(x[..., None, :], self.others[:, t + 1])
        return logsumexp(log_f - self._pred[t], axis=-1)

    def log_beta(self, t, x_prev, x):
        m = self.model
        if t == 0:
            return m.log_initial(x) + m.log_observation(0, x) + self.bif(0, x)
        return m.log_transition(x_prev, x) + m.log_observation(t, x) + self.bif(t, x) - self.bif(t - 1, x_prev)

    def log_w(self, t, x_prev, x):
        if not self.collapsed:
            return super().log_w(t, x_prev, x)
        n = np.shape(x)[0]
        lw = self.model.log_observation(t, x) + self.proposal.log_normalizer(t, x_prev, n)
        return lw if t == 0 else lw - self.bif(t - 1, x_prev)

    def log_backward(self, t, x_prev, x):
        return self.model.log_transition(x_prev, x) - self.bif(t - 1, x_prev)


def default_proposal_builder(model: StateSpaceModel, others: np.ndarray, est: BifEstimator) -> Proposal:
    return model.replica_proposal(others, est.log_predictive)


def build_replica_target(
    k: int,
    ensemble,
    est: BifEstimator,
    model: StateSpaceModel,
    proposal: Optional[Proposal] = None,
    proposal_builder: ProposalBuilder = default_proposal_builder,
) -> ReplicaTarget:
    """Target for replica ``k`` built from every other replica of ``ensemble`` (shape ``(K, T, d)``)."""
    others = np.delete(np.asarray(ensemble, dtype=float), k, axis=0)
    if proposal is None:
        proposal = proposal_builder(model, others, est)
    return ReplicaTarget(model, proposal, est, others)


@dataclass(frozen=True)
class ReplicaUpdate:
    kind: str = REPLICA_CSMC
    period: int = 1
    offset: int = 0

    def __post_init__(self):
        if self.kind not in UPDATE_KINDS:
            raise ValueError(f"unknown update kind {self.kind!r}")
        if self.period < 1:
            raise ValueError("period must be >= 1")

    def due(self, sweep_index: int) -> bool:
        return self.kind != FROZEN and sweep_index % self.period == self.offset % self.period


@dataclass(frozen=True)
class ReplicaSchedule:
    updates: tuple

    def __post_init__(self):
        updates = tuple(u if isinstance(u, ReplicaUpdate) else ReplicaUpdate(u) for u in self.updates)
        if not any(u.kind == REPLICA_CSMC for u in updates):
            raise ValueError("schedule needs at least one replica_csmc update")
        object.__setattr__(self, "updates", updates)

    @classmethod
    def of(cls, *kinds: str) -> "ReplicaSchedule":
        return cls(tuple(ReplicaUpdate(k) for k in kinds))

    @classmethod
    def all_replica(cls, K: int) -> "ReplicaSchedule":
        return cls.of(*([REPLICA_CSMC] * K))

    @property
    def K(self) -> int:
        return len(self.updates)

    def __getitem__(self, k) -> ReplicaUpdate:
        return self.updates[k]


def replica_csmc_sweep(
    ensemble,
    schedule: ReplicaSchedule,
    est: BifEstimator,
    model: StateSpaceModel,
    cfg: CsmcConfig,
    rng: np.random.Generator,
    proposal_builder: ProposalBuilder = default_proposal_builder,
    sweep_index: int = 0,
    default_target: Optional[AuxiliaryTarget] = None,
    executor: Optional[Executor] = None,
) -> np.ndarray:
    """One pass over the replicas in index order.

    Replica ``k`` (when due) sees the already-updated replicas ``< k`` and the
    current replicas ``> k``. Each replica draws from its own child stream of
    ``rng``, so running the ``iterated_csmc`` updates on ``executor`` gives the
    same result as running them inline.
    """
    old = np.asarray(ensemble, dtype=float)
    K = old.shape[0]
    if K < 2:
        raise ValueError("replica cSMC needs K >= 2 replicas")
    if schedule.K != K:
        raise ValueError(f"schedule covers {schedule.K} replicas, ensemble has {K}")
    rngs = rng.spawn(K)
    default_target = DefaultTarget(model) if default_target is None else default_target
    new = old.copy()

    iterated = [k for k in range(K) if schedule[k].kind == ITERATED_CSMC and schedule[k].due(sweep_index)]
    if executor is not None and iterated:
        futures = {k: executor.submit(iterated_csmc_kernel, default_target, old[k], cfg, rngs[k]) for k in iterated}
        done = {k: fut.result() for k, fut in futures.items()}
    else:
        done = {k: iterated_csmc_kernel(default_target, old[k], cfg, rngs[k]) for k in iterated}

    for k in range(K):
        if k in done:
            new[k] = done[k]
        elif schedule[k].kind == REPLICA_CSMC and schedule[k].due(sweep_index):
            snapshot = np.concatenate([new[:k], old[k + 1 :]])
            target = ReplicaTarget(model, proposal_builder(model, snapshot, est), est, snapshot)
            new[k] = iterated_csmc_kernel(target, old[k], cfg, rngs[k])
    return new


def initialize_ensemble(
    model: StateSpaceModel,
    default_target: Optional[AuxiliaryTarget],
    N_init: int,
    K: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """K independent paths, each drawn from its own standard SMC pass."""
    target = DefaultTarget(model) if default_target is None else default_target
    return np.stack([smc_sample(target, N_init, r)[0] for r in rng.spawn(K)])


def check_ensemble(ensemble) -> np.ndarray:
    ensemble = np.asarray(ensemble, dtype=float)
    if ensemble.ndim != 3 or ensemble.shape[0] < 2:
        raise ValueError("an ensemble is a (K, T, d) array with K >= 2")
    if not np.all(np.isfinite(ensemble)):
        raise ValueError("ensemble contains non-finite states")
    return ensemble

