"""Contour dynamics for modified SQG patches on the plane and the half-plane."""
from . import kernels
from .contour import (
    APRIORI_LOG,
    AprioriBoundViolation,
    BetaKernel,
    CollisionError,
    Mollified,
    Plain,
    RhsField,
    apriori_rhs_bound,
    contour_rhs,
    contour_rhs_beta,
    contour_rhs_mollified,
    mollify_curve,
    rhs,
)
from .curvekit import (
    ContourState,
    Curve,
    DegenerateCurveError,
    Domain,
    GeometryError,
    PatchFamily,
    circle,
    constant_speed_reparametrize,
    delta_functional,
    ellipse,
    f_functional,
    h3_norm,
    load_snapshot,
    make_state,
    save_snapshot,
    triple_norm,
    validate_patch_family,
)
from .evolve import (
    BlowupVerdict,
    EvolveConfig,
    RunResult,
    Thresholds,
    VerdictKind,
    advect_tracers,
    run,
    step,
)
from .fields import KernelSpec, NearSingularWarning, velocity_at, velocity_gradient, velocity_oracle
from .metrics import (
    ComparisonReport,
    ConvergenceTable,
    compare_states,
    convergence_study,
    existence_time_estimate,
    hausdorff_distance,
    l2_curve_distance,
    symmetric_difference_area,
    weak_form_residual,
)

__version__ = "0.1.0"
