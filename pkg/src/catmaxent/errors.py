"""Exception hierarchy shared by every module of the package."""


class CatMaxEntError(Exception):
    """Base class for all package errors."""


class ValidationError(CatMaxEntError, ValueError):
    """Input failed a semantic check (bad probability, duplicate constraint...)."""


class SchemaMismatchError(ValidationError):
    """A pattern or tuple refers to an attribute or value outside the schema."""


class EmptyInputError(ValidationError):
    pass


class SpaceTooLargeError(ValidationError):
    """Raised by operations that must enumerate the tuple space."""


class DomainError(ValidationError):
    pass


class IngestError(ValidationError):
    """Error while reading an external file; carries its location."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NonConvergenceError(CatMaxEntError):
    """Iterative scaling did not reach the requested tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class InfeasibleConstraintError(NonConvergenceError):
    """A constrained pattern has zero support under the current model."""


class InternalConsistencyError(CatMaxEntError, RuntimeError):
    """An invariant that cannot fail on correct code did fail."""


class SamplingError(CatMaxEntError):
    pass


class SelectionError(CatMaxEntError):
    """Model selection aborted; ``trace`` holds the steps completed so far."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)
