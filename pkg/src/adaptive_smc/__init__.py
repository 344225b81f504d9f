"""Adaptive sequential Monte Carlo with an exact finite-state oracle."""
from .core import (AdaptiveModel, ConfigurationError, ParticleCloud, RunRecord, SMCError,
                   batch_estimates, estimate_normalized, estimate_unnormalized, init_cloud,
                   make_rng, multinomial_resample, run_adaptive, run_perfect, smc_step)
from .adaptation import (KernelSpec, StatisticSpec, eval_statistic, pcn_coordinate_kernel,
                         rwm_scaled_kernel)
from .tempering import (TemperedRun, TemperingProblem, TemperingState, ess, next_beta,
                        solve_next_beta, tempered_run)
from .oracle import (FiniteModel, FlowResult, OracleModelError, TemperingFiniteModel,
                     asymp_var_normalized, asymp_var_unnormalized, exact_flow, limit_ladder,
                     nc_relative_variance, semigroup_L, stability_check, tempering_clt_cov)

__version__ = "0.1.0"
