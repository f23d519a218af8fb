import itertools

import numpy as np
import pytest
from scipy import stats

from repcsmc.core import DegenerateWeightsError, GaussianDensity, Proposal
from repcsmc.csmc import (
    AuxiliaryTarget,
    CsmcConfig,
    DefaultTarget,
    ParticleSystem,
    backward_sample,
    csmc_step,
    iterated_csmc_kernel,
    smc_sample,
)
from repcsmc.kalman import kalman_filter, rts_smoother

from conftest import tiny_lgssm


class FixedProposal(Proposal):
    """Every particle is a copy of a fixed path."""

    def __init__(self, path):
        self.path = np.asarray(path, dtype=float)

    def sample(self, t, x_prev, rng, size):
        return np.repeat(self.path[t][None], size, axis=0)

    def logpdf(self, t, x_prev, x):
        return np.zeros(len(x))


class NormalProposal(Proposal):
    def sample(self, t, x_prev, rng, size):
        return rng.standard_normal((size, 1))

    def logpdf(self, t, x_prev, x):
        return GaussianDensity([0.0], [[1.0]]).logpdf(x)


class ConstantTarget(AuxiliaryTarget):
    """log_w(t) = c[t] for every particle: the proposal is the target."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)
        self.T = len(c)
        self.proposal = NormalProposal()

    def log_beta(self, t, x_prev, x):
        return self.c[t] + self.proposal.logpdf(t, x_prev, x)


class TableTarget(AuxiliaryTarget):
    """Arbitrary user-supplied weights, used to check degenerate-weight handling."""

    def __init__(self, T, proposal, log_w_fn, log_beta_fn=None):
        self.T = T
        self.proposal = proposal
        self._log_w = log_w_fn
        self._log_beta = log_beta_fn

    def log_w(self, t, x_prev, x):
        return self._log_w(t, x_prev, x)

    def log_beta(self, t, x_prev, x):
        return self._log_beta(t, x_prev, x)


def test_config_requires_two_particles():
    with pytest.raises(ValueError):
        CsmcConfig(1)


def test_smc_perfect_proposal_log_z(rng):
    c = [0.3, -1.2, 2.0]
    _, log_z = smc_sample(ConstantTarget(c), 20, rng)
    assert log_z == pytest.approx(sum(c))


def test_smc_single_particle_log_z(rng):
    model = tiny_lgssm(T=4)
    target = DefaultTarget(model)
    path, log_z = smc_sample(target, 1, np.random.default_rng(3))
    expected = sum(float(model.log_observation(t, path[t])) for t in range(4))
    assert log_z == pytest.approx(expected)


def test_smc_degenerate_weights_reports_time(rng):
    model = tiny_lgssm(T=4)
    target = TableTarget(4, model.bootstrap_proposal(), lambda t, xp, x: np.full(len(x), -np.inf if t == 2 else 0.0))
    with pytest.raises(DegenerateWeightsError) as info:
        smc_sample(target, 10, rng)
    assert info.value.t == 2


def test_smc_path_shape(rng):
    path, _ = smc_sample(DefaultTarget(tiny_lgssm(d=2, T=6)), 30, rng)
    assert path.shape == (6, 2)


def test_bootstrap_weight_is_observation_density(rng):
    model = tiny_lgssm(d=2, T=4)
    target = DefaultTarget(model)
    x_prev = rng.standard_normal((7, 2))
    x = rng.standard_normal((7, 2))
    for t in range(4):
        np.testing.assert_array_equal(target.log_w(t, x_prev, x), model.log_observation(t, x))
        generic = AuxiliaryTarget.log_w(target, t, x_prev, x)
        np.testing.assert_allclose(generic, model.log_observation(t, x), atol=1e-12)


def test_reference_path_embedded_and_ancestry_consistent(rng):
    model = tiny_lgssm(d=2, T=8)
    target = DefaultTarget(model)
    x_ref = rng.standard_normal((8, 2))
    for _ in range(20):
        sys = csmc_step(target, x_ref, CsmcConfig(6), rng)
        b = sys.cond_slots
        np.testing.assert_array_equal(sys.particles[np.arange(8), b], x_ref)
        assert np.all((sys.ancestors >= 0) & (sys.ancestors < 6))
        np.testing.assert_array_equal(sys.ancestors[np.arange(7), b[1:]], b[:-1])
        np.testing.assert_array_equal(sys.trace(b[-1]), x_ref)


def test_reference_length_checked(rng):
    with pytest.raises(ValueError):
        csmc_step(DefaultTarget(tiny_lgssm(T=5)), np.zeros((4, 1)), CsmcConfig(4), rng)


def test_point_mass_proposal_is_identity(rng):
    x_ref = rng.standard_normal((5, 2))
    target = TableTarget(
        5, FixedProposal(x_ref), lambda t, xp, x: np.zeros(len(x)), lambda t, xp, x: np.zeros(len(xp))
    )
    sys = csmc_step(target, x_ref, CsmcConfig(5), rng)
    assert np.all(sys.particles == x_ref[:, None, :])
    np.testing.assert_array_equal(backward_sample(sys, target, rng), x_ref)
    np.testing.assert_array_equal(iterated_csmc_kernel(target, x_ref, CsmcConfig(3), rng), x_ref)


def test_conditioned_slot_uniform_and_free_particle_fresh(rng):
    model = tiny_lgssm(T=1)
    target = DefaultTarget(model)
    x_ref = np.array([[10.0]])
    n = 100_000
    slots = np.empty(n, dtype=int)
    free = np.empty(n)
    for i in range(n):
        sys = csmc_step(target, x_ref, CsmcConfig(2), rng)
        slots[i] = sys.cond_slots[0]
        free[i] = sys.particles[0, 1 - slots[i], 0]
    assert abs(slots.mean() - 0.5) < 3 * np.sqrt(0.25 / n)
    # the free particle is a fresh draw from the initial law N(0, Sigma1)
    assert stats.kstest(free, "norm", args=(0, np.sqrt(model.Sigma1[0, 0]))).pvalue > 0.001


def test_only_reference_alive_proceeds(rng):
    model = tiny_lgssm(T=4)
    x_ref = rng.standard_normal((4, 1))

    def lw(t, xp, x):
        return np.where(np.all(x == x_ref[t], axis=-1), 0.0, -np.inf)

    target = TableTarget(4, model.bootstrap_proposal(), lw, lambda t, xp, x: model.log_transition(xp, x))
    out = iterated_csmc_kernel(target, x_ref, CsmcConfig(5), rng)
    np.testing.assert_array_equal(out, x_ref)


def test_all_dead_including_reference_raises(rng):
    model = tiny_lgssm(T=4)
    target = TableTarget(4, model.bootstrap_proposal(), lambda t, xp, x: np.full(len(x), -np.inf if t == 1 else 0.0))
    with pytest.raises(DegenerateWeightsError) as info:
        csmc_step(target, np.zeros((4, 1)), CsmcConfig(5), rng)
    assert info.value.t == 1


def test_backward_single_time_is_final_categorical(rng):
    sys = ParticleSystem(
        particles=np.arange(3.0).reshape(1, 3, 1),
        ancestors=np.empty((0, 3), dtype=int),
        log_weights=np.log([[0.2, 0.5, 0.3]]),
        cond_slots=np.zeros(1, dtype=int),
    )
    target = DefaultTarget(tiny_lgssm(T=1))
    draws = np.array([backward_sample(sys, target, rng)[0, 0] for _ in range(20_000)])
    counts = np.bincount(draws.astype(int), minlength=3)
    assert stats.chisquare(counts, 20_000 * np.array([0.2, 0.5, 0.3])).pvalue > 0.001


def test_backward_collapsed_cloud(rng):
    path = rng.standard_normal((4, 2))
    sys = ParticleSystem(
        np.repeat(path[:, None], 5, axis=1), np.zeros((3, 5), dtype=int), np.zeros((4, 5)), np.zeros(4, dtype=int)
    )
    np.testing.assert_array_equal(backward_sample(sys, DefaultTarget(tiny_lgssm(d=2, T=4)), rng), path)


def test_backward_sampling_law_by_enumeration(rng):
    model = tiny_lgssm(T=2)
    target = DefaultTarget(model)
    particles = np.array([[[-0.7], [0.4]], [[1.1], [-0.2]]])
    log_w = np.log([[0.3, 0.7], [0.6, 0.4]])
    sys = ParticleSystem(particles, np.zeros((1, 2), dtype=int), log_w, np.zeros(2, dtype=int))
    # exact law: P(b1 = j, b2 = i) = w2_i / sum(w2) * f(x2_i | x1_j) w1_j / sum_j'(...)
    probs = {}
    w2 = np.exp(log_w[1]) / np.exp(log_w[1]).sum()
    for i in range(2):
        f = np.exp(model.log_transition(particles[0], particles[1, i]) + log_w[0])
        for j in range(2):
            probs[(j, i)] = w2[i] * f[j] / f.sum()
    n = 100_000
    counts = dict.fromkeys(probs, 0)
    for _ in range(n):
        out = backward_sample(sys, target, rng)
        j = int(np.flatnonzero(particles[0, :, 0] == out[0, 0])[0])
        i = int(np.flatnonzero(particles[1, :, 0] == out[1, 0])[0])
        counts[(j, i)] += 1
    keys = list(itertools.product(range(2), range(2)))
    obs = np.array([counts[k] for k in keys])
    exp = n * np.array([probs[k] for k in keys])
    assert stats.chisquare(obs, exp).pvalue > 0.001


def test_backward_weight_shift_invariance(rng):
    model = tiny_lgssm(d=2, T=6)
    target = DefaultTarget(model)
    sys = csmc_step(target, rng.standard_normal((6, 2)), CsmcConfig(8), rng)
    shifted = ParticleSystem(sys.particles, sys.ancestors, sys.log_weights.copy(), sys.cond_slots)
    shifted.log_weights[3] += 17.25
    shifted.log_weights[0] -= 3.5
    a = backward_sample(sys, target, np.random.default_rng(11))
    b = backward_sample(shifted, target, np.random.default_rng(11))
    np.testing.assert_array_equal(a, b)


def test_degenerate_backward_weights_raise(rng):
    target = DefaultTarget(tiny_lgssm(T=3))
    sys = ParticleSystem(np.zeros((3, 2, 1)), np.zeros((2, 2), dtype=int), np.zeros((3, 2)), np.zeros(3, dtype=int))
    sys.log_weights[1] = -np.inf
    with pytest.raises(DegenerateWeightsError) as info:
        backward_sample(sys, target, rng)
    assert info.value.t == 1


def test_repeated_kernel_converges_to_smoothed_mean():
    model = tiny_lgssm(T=3, seed=4)
    p = model.lgssm_params()
    smoothed = rts_smoother(kalman_filter(p, model.y), p).means[0, 0]
    rng = np.random.default_rng(5)
    target, cfg = DefaultTarget(model), CsmcConfig(10)
    x = np.full((3, 1), 5.0)
    n = 20_000
    trace = np.empty(n)
    for i in range(n):
        x = iterated_csmc_kernel(target, x, cfg, rng)
        trace[i] = x[0, 0]
    # batch-means standard error
    batches = trace.reshape(100, -1).mean(axis=1)
    se = batches.std(ddof=1) / np.sqrt(100)
    assert abs(trace.mean() - smoothed) < 3 * se
