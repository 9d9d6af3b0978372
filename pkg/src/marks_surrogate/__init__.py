"""Quadratic surrogates for group l_q constrained least squares."""

from .errors import (
    DimensionError,
    InfeasibleStartError,
    InnerSolverError,
    MajorizationError,
    MonteCarloError,
    NearZeroCoordinateError,
    NonFiniteValueError,
    NonPositiveCurvatureError,
    OracleError,
    SingularGroupError,
    SurrogateError,
)
from .experiment import (
    ExperimentConfig,
    ExperimentSummary,
    RunRecord,
    generate_instance,
    least_squares_baseline,
    run_monte_carlo,
    run_single,
    starting_point,
)
from .kernels import (
    GroupedVector,
    MpeConstraintSpec,
    check_fisher_identity,
    mpe_gradient,
    mpe_value,
    vmgm_weight,
    vmgm_weights,
)
from .oracle import OracleResult, oracle_global_solve, radial_feasibility_project
from .solvers import (
    IterateTrace,
    ProblemInstance,
    SolverOptions,
    inner_qcls_solve,
    marks_solve,
    mm_minimize,
)
from .surrogate import (
    QuadraticSurrogate,
    build_constraint_surrogate,
    check_marks_conditions,
    surrogate_value,
)
