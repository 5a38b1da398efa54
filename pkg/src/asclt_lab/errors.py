"""Exception types raised by the toolkit."""


class AscltLabError(Exception):
    """Base class for all toolkit errors."""

    code = "error"


class DomainError(AscltLabError, ValueError):
    """An argument lies outside the domain of the requested quantity."""

    code = "domain_error"


class EmbeddingError(AscltLabError, ArithmeticError):
    """The circulant embedding of a covariance is not nonnegative definite."""

    code = "embedding_failure"

    def __init__(self, message, min_eigenvalue):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class CapacityError(AscltLabError, MemoryError):
    """The request exceeds the memory or cost budget of an algorithm."""

    code = "capacity_error"


class FixtureSchemaError(AscltLabError, ValueError):
    """A fixture file does not follow the expected schema."""

    code = "schema_mismatch"
