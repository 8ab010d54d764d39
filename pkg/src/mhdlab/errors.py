"""Exception hierarchy. Every validation failure derives from ``ValidationError``."""


class ValidationError(ValueError):
    """Input rejected before any numerical work (CLI exit code 2)."""


class ContractError(ValidationError):
    """Wrong field kind or shape for an operation."""


class GridMismatchError(ValidationError):
    """Fields sampled on different grids."""


class DomainError(ValidationError):
    """A cylinder or stencil leaves the sampled domain."""


class PreconditionError(ValidationError):
    """A numerical precondition (e.g. solenoidality) is violated."""


class ParameterError(ValidationError):
    """A parameter is out of its admissible range."""


class ToleranceError(RuntimeError):
    """A numerical check exceeded its tolerance (CLI exit code 3 in strict mode)."""
