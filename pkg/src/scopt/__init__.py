"""Derivative-free global optimisation by stochastic optimal control.

Particles follow a Brownian motion steered by a softmin drift estimated from
Gaussian look-ahead samples.  Objectives may be functions on R^d or
functionals of the empirical measure of an interacting particle cloud.
"""

from .core import (
    ConfigError,
    InitCondition,
    InvalidEvaluation,
    LinearFit,
    RngStream,
    RunConfig,
    derive_seed,
    linear_fit,
    log_mean_exp,
    log_mean_exp_stderr,
    softmin_weights,
)
from .euclidean import EuclideanResult, TrajectoryRecord, estimate_drift, euler_step, run_iteration, solve
from .harness import (
    SweepRecord,
    emit_csv,
    emit_snapshots,
    emit_svg_scatter,
    epsilon_sweep,
    n_sweep,
    rate_fit_comparison,
    read_csv,
)
from .measure import (
    MeasureResult,
    estimate_drift_frozen,
    estimate_drift_joint,
    estimate_drift_joint_separable,
    project_context,
    solve_measure,
)
from .objectives import (
    REGISTRY,
    MeasureObjectiveSpec,
    ObjectiveSpec,
    ackley,
    empirical_functional,
    get_problem,
    yang4,
)
from .value import (
    ValueEstimate,
    estimate_value_controlled,
    estimate_value_euclidean,
    estimate_value_particle,
    realized_cost,
)

__version__ = "0.1.0"
