"""Online EM for Poisson nonnegative matrix factorisation as a hidden Markov model.

Observations ``y_t`` are Poisson with mean ``B x_t`` where ``x_t`` follows a
Markov chain.  The package provides exact forward smoothing for finite
state spaces, particle (SMC) online EM for general ones, batch EM, dataset
simulation and a command-line interface.
"""

from .engine import EstimateTrace, OnlineConfig, init_theta, run_batch, run_online
from .evaluate import AlignmentReport, align_columns
from .exact import (
    NotEnumerableError,
    NumericalUnderflowError,
    batch_em_iteration,
    batch_smoothed_stats,
    brute_force_smoothed_stats,
    exact_online_em_step,
    marginal_loglik,
)
from .model import DegenerateIntensityError, DomainError, allocation_posterior_mean, obs_loglik
from .params import StepSizeSchedule, SuffStats, ThetaParams, mstep_B, mstep_psi, step_size
from .processes import (
    BasisSelectionParams,
    BasisSelectionProcess,
    RelaxedParams,
    RelaxedProcess,
    make_process,
)
from .simulate import random_basis, simulate
from .smc import ParticleCollapseError, smc_online_em_step

__version__ = "0.1.0"

__all__ = [
    "AlignmentReport", "BasisSelectionParams", "BasisSelectionProcess", "DegenerateIntensityError",
    "DomainError", "EstimateTrace", "NotEnumerableError", "NumericalUnderflowError", "OnlineConfig",
    "ParticleCollapseError", "RelaxedParams", "RelaxedProcess", "StepSizeSchedule", "SuffStats",
    "ThetaParams", "align_columns", "allocation_posterior_mean", "batch_em_iteration",
    "batch_smoothed_stats", "brute_force_smoothed_stats", "exact_online_em_step", "init_theta",
    "make_process", "marginal_loglik", "mstep_B", "mstep_psi", "obs_loglik", "random_basis",
    "run_batch", "run_online", "simulate", "smc_online_em_step", "step_size",
]
