"""Stabilized cut finite element solver for convection on implicit surfaces."""

from .analysis import (
    ConditionReport,
    ConvergenceTable,
    ErrorReport,
    condition_number,
    eoc,
    error_norms,
    solve,
)
from .assembly import (
    AssemblyParams,
    AssumptionReport,
    DofMap,
    LinearSystem,
    assemble,
    check_method_assumptions,
    coefficient_beta_h,
)
from .errors import (
    ConfigError,
    EstimatorError,
    GeometryError,
    MeshError,
    SolverError,
    SurfcutError,
)
from .geometry import (
    BMapResult,
    ImplicitSurface,
    ImplicitTorus,
    ProblemData,
    SurfaceFrame,
    coercivity_sample,
    surface_divergence_fd,
    torus_benchmark,
)
from .mesh import (
    BackgroundMesh,
    CutFacet,
    CutSurfaceMesh,
    GeometryReport,
    LevelSetField,
    build_background,
    export_obj,
    extract_cut_surface,
    geometry_report,
    interpolate_levelset,
)
from .quadrature import TriangleRule, p1_eval_and_grad, tangential_gradient, triangle_rule

__version__ = "0.1.0"
