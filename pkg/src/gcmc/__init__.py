"""Global consensus Monte Carlo: distributed Bayesian inference via an instrumental model."""

from ._backend import BACKEND
from .models import (
    InstrumentalState,
    KernelFamily,
    ModelSpec,
    build_model,
    gaussian_model,
    gaussian_model_from_observations,
    joint_log_density,
    lognormal_model,
    logistic_model,
    smoothed_partial_log_likelihood,
)
from .gibbs import ChainOutput, GibbsConfig, estimate, run_chain, run_direct_rwm
from .smc import (
    ParticleSystem,
    ScheduleConfig,
    SmcResult,
    SmcTrace,
    asymptotic_variance_estimate,
    cess,
    ess,
    incremental_log_weight,
    next_lambda,
    resample_multinomial,
    run_smc,
)
from .oracle import GaussianSetup
from .regression import (
    RegressionInput,
    StoppingState,
    bias_corrected_estimate,
    mse_decomposition,
    select_inclusion_set,
    weighted_r_squared,
)
from .cluster import (
    LatencyModel,
    budget_report,
    cmc_combine,
    iteration_time,
    likelihood_fraction,
    run_subposterior_chains,
    samples_within_budget,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ChainOutput",
    "GaussianSetup",
    "GibbsConfig",
    "InstrumentalState",
    "KernelFamily",
    "LatencyModel",
    "ModelSpec",
    "ParticleSystem",
    "RegressionInput",
    "ScheduleConfig",
    "SmcResult",
    "SmcTrace",
    "StoppingState",
    "asymptotic_variance_estimate",
    "bias_corrected_estimate",
    "budget_report",
    "build_model",
    "cess",
    "cmc_combine",
    "ess",
    "estimate",
    "gaussian_model",
    "gaussian_model_from_observations",
    "incremental_log_weight",
    "iteration_time",
    "joint_log_density",
    "likelihood_fraction",
    "lognormal_model",
    "logistic_model",
    "mse_decomposition",
    "next_lambda",
    "resample_multinomial",
    "run_chain",
    "run_direct_rwm",
    "run_smc",
    "run_subposterior_chains",
    "samples_within_budget",
    "select_inclusion_set",
    "smoothed_partial_log_likelihood",
    "weighted_r_squared",
    "__version__",
]
