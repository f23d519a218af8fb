"""Replica conditional SMC for exact smoothing in state-space models."""

from .core import (
    BootstrapProposal,
    DegenerateWeightsError,
    GaussianDensity,
    GaussianMixture,
    Proposal,
    StateSpaceModel,
    categorical_sample,
    gaussian_logpdf,
    gaussian_partial_product,
    gaussian_product,
    logsumexp,
    normalize_log_weights,
    sample_gaussian_mixture,
)
from .csmc import (
    AuxiliaryTarget,
    CsmcConfig,
    DefaultTarget,
    ParticleSystem,
    backward_sample,
    csmc_step,
    iterated_csmc_kernel,
    smc_sample,
)
from .diagnostics import AcfResult, coverage_check, iact, mixture_weight_variance, overall_mean_se
from .harness import RunConfig, TraceStore, run_experiment
from .kalman import (
    FilterResult,
    LgssmParams,
    SmootherResult,
    exact_log_bif,
    ffbs_sample,
    kalman_filter,
    predictive_logpdf,
    rts_smoother,
)
from .models import (
    LinearGaussianModel,
    Lorenz96Model,
    PoissonGaussianModel1,
    PoissonGaussianModel2,
    lg_mixture_proposal,
    lorenz_drift,
    lorenz_mixture_proposal,
    rk4_integrate,
)
from .replica import (
    ConstantPredictive,
    MonteCarloPredictive,
    ReplicaSchedule,
    ReplicaTarget,
    ReplicaUpdate,
    build_replica_target,
    initialize_ensemble,
    replica_csmc_sweep,
)

__version__ = "0.1.0"
