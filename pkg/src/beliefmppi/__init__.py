"""Path integral control in Gaussian belief space.

Library and CLI for sampling-based control of partially observed systems
under a Gaussian belief approximation, with matching diagnostics, baseline
controllers, and a closed-loop light-dark navigation benchmark.
"""

from .controllers import (
    ControllerOutput,
    Rollout,
    ce_mppi,
    control_projection,
    ekf_ilqg,
    mppi_belief,
    normalized_weights,
    pipf,
)
from .costs import (
    CostSpec,
    expected_quadratic_cost,
    obstacle_cost_moments,
    quadratic_cost_variance,
    reduced_running_cost,
    reduced_terminal_cost,
)
from .errors import ConfigurationError, MatchingInfeasibleError, NumericalError
from .harness import (
    BenchmarkConfig,
    BenchmarkResults,
    SweepResults,
    emit_plot_data,
    run_benchmark,
    sweep_obstacle_weight,
    sweep_theta,
)
from .matching import (
    MatchingReport,
    check_range_equality,
    check_range_inclusion,
    construct_r_inverse,
    matching_report,
    matching_residual,
)
from .models import (
    LightDarkParams,
    Obstacle,
    SystemModel,
    check_affine_observation,
    eval_model,
    light_dark_sigma,
    make_light_dark,
    make_linear_model,
)
from .schedule import BeliefSchedule, propagate_schedule, psd_factor, riccati_rhs
from .simulator import (
    TrialResult,
    ekf_correct,
    ekf_predict,
    ekf_step,
    euler_maruyama_step,
    observe,
    run_trial,
    systematic_resample,
)

__version__ = "0.1.0"
