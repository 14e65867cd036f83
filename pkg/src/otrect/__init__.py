"""Exact discrete optimal transport with certificates for the structure of its solutions.

The package solves discrete Kantorovich problems exactly and checks
b-monotonicity of the optimal support, non-degeneracy and twist of the
cost, local Lipschitz-graph rectifiability after a diagonal rotation, and
the change-of-variables equation for recovered transport maps.
"""

__version__ = "0.1.0"

from .costs import (
    BUILTIN_COSTS,
    CostModel,
    WorkBox,
    bilinear_cost,
    builtin_cost,
    cost_matrix,
    eval_cost,
    example31_cost,
    example32_cost,
    fd_mixed_hessian,
    mixed_hessian,
    quadratic_cost,
)
from .errors import (
    CertificationFailure,
    ConsistencyError,
    DegeneracyError,
    DegenerateInputError,
    DomainError,
    InputError,
    OTRectError,
    SkipSample,
    SolverFailure,
    UnsupportedOperationError,
    VerificationError,
)
from .jacobian import (
    JacobianReport,
    MapEstimate,
    MapSample,
    estimate_map,
    jacobian_residual,
    local_jacobian,
    pushforward_check,
)
from .measures import (
    DiscreteMeasure,
    SupportSample,
    TransportPlan,
    kantorovich_cost,
    marginals,
    mix_plans,
    product_plan,
    support,
)
from .monotonicity import MonotonicityReport, check_cyclical, check_pairwise
from .nondegeneracy import HessianClassification, TwistReport, classify_point, twist_scan
from .rectifier import (
    RectifiabilityCertificate,
    certify_lipschitz,
    estimate_epsilon,
    fit_graph,
    normalize_frame,
    rectify,
    rotate_diagonal,
)
from .reproduce import build_example31_plans, build_example32_surface, verify_lower_bound
from .solver import brute_force, dual_potentials, network_simplex, solve_exact

__all__ = [
    "BUILTIN_COSTS",
    "CertificationFailure",
    "ConsistencyError",
    "CostModel",
    "DegeneracyError",
    "DegenerateInputError",
    "DiscreteMeasure",
    "DomainError",
    "HessianClassification",
    "InputError",
    "JacobianReport",
    "MapEstimate",
    "MapSample",
    "MonotonicityReport",
    "OTRectError",
    "RectifiabilityCertificate",
    "SkipSample",
    "SolverFailure",
    "SupportSample",
    "TransportPlan",
    "TwistReport",
    "UnsupportedOperationError",
    "VerificationError",
    "WorkBox",
    "bilinear_cost",
    "brute_force",
    "build_example31_plans",
    "build_example32_surface",
    "builtin_cost",
    "certify_lipschitz",
    "check_cyclical",
    "check_pairwise",
    "classify_point",
    "cost_matrix",
    "dual_potentials",
    "estimate_epsilon",
    "estimate_map",
    "eval_cost",
    "example31_cost",
    "example32_cost",
    "fd_mixed_hessian",
    "fit_graph",
    "jacobian_residual",
    "kantorovich_cost",
    "local_jacobian",
    "marginals",
    "mix_plans",
    "mixed_hessian",
    "network_simplex",
    "normalize_frame",
    "product_plan",
    "pushforward_check",
    "quadratic_cost",
    "rectify",
    "rotate_diagonal",
    "solve_exact",
    "support",
    "twist_scan",
    "verify_lower_bound",
    "__version__",
]
