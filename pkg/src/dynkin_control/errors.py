"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`DynkinLabError`. The CLI maps the two broad families onto exit codes:
configuration problems (2) and numerical problems (3).
"""


class DynkinLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DynkinLabError):
    """Invalid scenario, parameter or problem data."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class ParameterError(ConfigurationError):
    """A numerical parameter is outside its admissible range."""


class DependencyError(ConfigurationError):
    """A pipeline stage was requested before the stage it depends on."""

    def __init__(self, stage, missing):
        self.stage = stage
        self.missing = missing
        super().__init__(f"stage '{stage}' requires output of stage '{missing}'")


class ExpressionError(ConfigurationError):
    """Parse or evaluation failure of a user expression."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class NumericalError(DynkinLabError):
    """Base class for failures of a numerical method."""


class StencilError(NumericalError):
    """A finite-difference stencil left the grid."""


class DataError(NumericalError):
    """Non-finite or otherwise unusable field data."""


class DomainError(NumericalError):
    """An argument is outside the mathematical domain of an operation."""


class IterationError(NumericalError):
    """An iterative solver stopped without meeting its tolerance."""

    def __init__(self, message, residual, iterations, solution=None):
        self.residual = residual
        self.iterations = iterations
        self.solution = solution
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} sweeps)")


class TopologyError(NumericalError):
    """Region labels do not have the expected band structure."""

    def __init__(self, message, column=None):
        self.column = column
        if column is not None:
            message = f"{message} (column {column})"
        super().__init__(message)


class AssumptionViolation(NumericalError):
    """Problem data violate a structural assumption of the theory."""


class BlowUpError(NumericalError):
    """A simulated state became non-finite."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite state at step {step}")


class GeometryError(NumericalError):
    """A reflecting band is empty or inverted."""


class QuadratureError(NumericalError):
    """Adaptive quadrature failed to reach its tolerance."""


class PreconditionError(NumericalError):
    """Input functions violate a stated precondition."""
