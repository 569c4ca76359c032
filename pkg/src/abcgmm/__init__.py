"""Simulation-based, optimization-free estimation toolkit.

Samples parameters from a prior or adaptive proposal, simulates summary
statistics or perturbed moment conditions, and recovers point estimates and
confidence intervals from kernel-weighted local polynomial mean and quantile
regressions evaluated at the origin.
"""

from .errors import (
    ConfigError,
    EstimationError,
    InsufficientSupport,
    SingularDesign,
    SolverNotConverged,
    WeightUnderflow,
)
from .estimators import (
    BilProblem,
    Functional,
    GmmProblem,
    PosteriorSummary,
    RegressorSet,
    WeightPolicy,
    bil_regressors,
    coordinate_functionals,
    estimate,
    gmm_regressors,
    matrix_inverse_sqrt,
    rescale_interval,
    resolve_two_step_weights,
    sl_gmm_estimate,
)
from .harness import (
    ExperimentConfig,
    MonteCarloReport,
    emit_report,
    report_from_json,
    run_experiment,
    run_two_round,
    tune_bandwidth,
)
from .kernels import BandwidthRule, KernelSpec, evaluate_kernel, nearest_neighbor_bandwidth
from .localreg import LocalFit, RegressionSample, check_function, local_poly_mean, local_poly_quantile
from .models import (
    MODEL_REGISTRY,
    NormalMeansModel,
    QuantileIvModel,
    ToyLocationScaleModel,
    build_model,
    iv_baseline,
    normal_analytic_posterior,
    quantile_iv_generate,
    quantile_iv_moments,
    toy_location_scale_simulate,
)
from .polybasis import MultiIndex, MultiIndexSet, basis_matrix, build_index_set, evaluate_basis
from .sampling import (
    DrawBatch,
    Marginal,
    PriorSpec,
    adaptive_proposal,
    halton_point,
    halton_points,
    importance_weights,
    sample_prior,
)

__version__ = "0.1.0"
