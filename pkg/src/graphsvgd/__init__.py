"""Graphical Stein variational gradient descent for continuous Markov random fields."""

from .diagnostics import (
    DiscrepancyEstimate,
    ksd_oracle_check,
    ksd_squared,
    localization_rmse,
    mmd_squared,
    moment_errors,
)
from .engine import (
    EngineConfig,
    NonFiniteError,
    OptimizerState,
    adagrad_step,
    blanket_access_audit,
    graphical_direction,
    langevin_step,
    run,
    svgd_direction_vanilla,
)
from .kernel import (
    CoordinateKernel,
    KernelSpec,
    coordinate_kernels,
    k_cross_second,
    k_eval,
    k_grad_first,
    median_bandwidth,
    rbf_eval,
)
from .model import (
    CliquePotential,
    CrowdsourcingData,
    GaussianMrfParams,
    GraphicalModel,
    NotPositiveDefiniteError,
    blanket,
    build_crowdsourcing_model,
    build_gaussian_mrf,
    build_sensor_model,
    check_gradients,
    gaussian_exact_moments,
    gaussian_exact_sample,
    gaussian_model,
    grid_graph,
    radius_graph,
)

from .experiments import (
    ExperimentConfig,
    default_config,
    run_experiment,
    summarize,
)

__version__ = "0.1.0"
