"""Penalized GLMs with linear subcompositional constraints and de-biased inference."""

from .composition import (
    AbundanceTable,
    filter_prevalence,
    load_abundance_csv,
    replace_zeros,
    to_log_composition,
)
from .constraints import (
    ConstraintSet,
    GroupConstraints,
    build_group_constraints,
    orthonormalize,
    read_groups_json,
)
from .inference import (
    DebiasOptions,
    InferenceResult,
    build_M,
    build_M_tilde,
    confidence_intervals,
    debias,
    run_inference,
    sigma_hat,
    solve_debias_row,
)
from .errors import (
    CompglmError,
    DataError,
    InferenceError,
    SelectionError,
    SimulationError,
    SolverError,
)
from .experiments import (
    AucReport,
    ExperimentConfig,
    ExperimentReport,
    StabilityReport,
    auc,
    run_coverage_experiment,
    stability_selection,
    train_test_evaluate,
)
from .families import (
    Dataset,
    Family,
    get_family,
    information,
    neg_loglik,
    score,
)
from .selection import (
    PathResult,
    ebic,
    gamma_rule,
    lambda_grid,
    lambda_max,
    select_lambda,
    xi_rule,
)
from .simulate import (
    GENERATOR_ID,
    SimulatedData,
    SimulationConfig,
    constraint_mode_set,
    default_beta,
    misspecified_groups,
    simulate_dataset,
    true_groups,
)
from .solver import (
    FitResult,
    SolverOptions,
    fit,
    kkt_residual,
    line_search,
    penalized_objective,
    prox_step,
    soft_threshold,
)

__version__ = "0.1.0"
