"""Ornstein-Uhlenbeck processes on graphs: simulation, likelihood inference,
sparse drift recovery and stochastic-volatility extensions."""

__version__ = "0.1.0"

from .errors import (ConfigError, GrouError, IdentifiabilityError, NonStationaryError,
                     NumericError)
from .graphs import (DynamicsMatrix, Graph, PsiParams, ThetaParams, check_stationary_psi,
                     check_stationary_spectral, check_stationary_theta, complete,
                     erdos_renyi, network_mask, q_from_psi, q_from_theta, ring,
                     row_normalize, vec, vec_inverse)
from .simulate import (CompoundPoissonSpec, JumpMarks, JumpSizeSampler, LevyDriverSpec,
                       SamplePath, Var1Representation, ergodic_average,
                       load_path_binary, load_path_csv, lyapunov_stationary_cov,
                       matrix_exponential, save_path_binary, save_path_csv,
                       simulate_grou, var1_decompose)
from .likelihood import (ContinuousPartOptions, FilterReport, LikelihoodStats,
                         compute_psi_stats, compute_theta_stats, continuous_increments,
                         log_likelihood_psi, log_likelihood_theta)
from .estimators import (ConfidenceRegion, EstimateReport, KroneckerPair, PsiGrouMLE,
                         ThetaGrouMLE, apply_network_mask_clt, confidence_region,
                         format_report, g_infinity, psi_clt_covariance, psi_mle,
                         q_mle_matrix, theta_mle)
from .lasso import (AdaptiveGrouLasso, LassoConfig, LassoResult, adaptive_lasso_fit,
                    lasso_path, support_recovery_score)
from .stochvol import (JumpComponentSpec, MatrixSubordinatorSpec, PsouSpec,
                       RankOneJumpSampler, TimeChangeSpec, autocovariance_norms,
                       conditional_estimate, conditional_stats, fit_decay_envelope,
                       simulate_psou, simulate_time_change, simulate_vol_modulated,
                       with_sigma_path)
from .harness import (SCENARIOS, ExperimentConfig, HorizonTable, McReport,
                      normality_tests, replicate_seed, rmse_slope, run_experiment,
                      save_mc_report)
from .config import load_config
from .rng import rng_stream

__all__ = [name for name in dir() if not name.startswith("_")]
