"""Bregman-regularized optimal transport and its inverse problem.

Forward solves, closed-form inverses, constraint sets for cost matrices and a
block coordinate descent solver for recovering costs from observed plans.
"""

__version__ = "0.1.0"

from .errors import (
    BregIOTError,
    ConvergenceError,
    DataError,
    DimensionError,
    DomainError,
    EigenFailure,
    GeneratorError,
    IoError,
    LineSearchFailure,
    MaxIterationsExceeded,
    UnsupportedCase,
)
from .generators import (
    BetaPotential,
    BregmanGenerator,
    Burg,
    Entropy,
    FermiDirac,
    Quadratic,
    bregman_divergence,
    generator_eval,
    get_generator,
    limiting_derivatives,
    target_set_contains,
)
from .report import SolveReport
from .forward import (
    DualPotentials,
    ForwardSolution,
    SolverConfig,
    TransportProblem,
    dual_gradient,
    dual_objective,
    dual_objective_general,
    kkt_residual,
    plan_from_potentials,
    solve_forward,
)
from .sets import (
    ED,
    Affine,
    ConstraintSet,
    MetricCone,
    Nonnegative,
    Sh,
    Shw,
    WholeSpace,
    contains,
    get_set,
    project,
    project_psd_cone_complement,
)
from .closed_form import (
    InverseCertificate,
    closed_form_inverse,
    construct_cost_nonneg,
    g_map,
    preimage_representative,
    set_membership,
    stability_rhs,
)
from .bcd import (
    BcdConfig,
    IotState,
    bcd_step,
    block_gradient_hessdiag,
    objective_E,
    objective_E_lambda,
    relative_kkt,
    solve_iot,
)
