"""Hierarchical state space model for short time-course expression data."""

__version__ = "0.1.0"

from .core import (DOWN, SAME, STATES, UP, Design, ExpressionDataset, PathSet, StatePath,
                   SufficientStats, ValidationError, compute_sufficient_stats,
                   enumerate_state_paths, validate_dataset)
from .em import (FitConfig, FitError, FitReport, GenePosteriors, e_step, estimate_sigma2,
                 fit_model, initialize_params, m_step_mean, m_step_mean_exact, m_step_state,
                 observed_log_likelihood)
from .estimator import HierarchicalStateSpaceModel
from .inference import (CallSet, PosteriorCurve, call, call_mjp, call_mmp, cluster_by_path,
                        estimate_fdr, posterior_mean_curve)
from .io import RunConfig, build_config, ingest_tsv
from .likelihood import (all_path_log_likelihoods, all_path_moments,
                         mc_oracle_log_likelihood, path_conditional_moments,
                         path_log_likelihood)
from .params import (REFERENCE_STATE, MeanLevelParams, ModelParams, ObservationParams,
                     StateLevelParams, default_simulation_params, prior_path_probability)
from .simulation import (BenchmarkConfig, MetricsReport, SimulationTruth, evaluate_calls,
                         pairwise_baseline, run_benchmark, simulate_dataset)

__all__ = [name for name in dir() if not name.startswith("_")]
