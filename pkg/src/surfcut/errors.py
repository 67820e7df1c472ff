"""Exception hierarchy shared by the solver library and the CLI.

The CLI maps these onto process exit codes: configuration errors exit 1,
geometry and mesh errors exit 2, solver failures exit 3, and estimator
non-convergence exits 4.
"""


class SurfcutError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SurfcutError):
    """Invalid configuration file, option value, or parameter combination."""


class GeometryError(SurfcutError):
    """Degenerate geometric query (z-axis point, outside the tubular
    neighborhood, singular tangent map)."""


class MeshError(SurfcutError):
    """Invalid or degenerate mesh data, including an empty cut."""


class SolverError(SurfcutError):
    """Linear solver failure: singular factorization or residual above the
    requested tolerance."""


class EstimatorError(SurfcutError):
    """Singular-value estimator failed to converge within the iteration
    budget."""

    def __init__(self, message, last_estimate=None, iterations=None):
        super().__init__(message)
        self.last_estimate = last_estimate
        self.iterations = iterations
