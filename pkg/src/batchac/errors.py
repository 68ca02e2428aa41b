"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Raised when an operation receives malformed or non-finite data."""


class NonFiniteGradient(InvalidInput):
    """Raised when an optimizer step would apply a non-finite gradient."""


class EnvUsageError(RuntimeError):
    """Raised when an environment is driven outside its protocol."""


class PipelineError(RuntimeError):
    """Raised when a worker thread dies and the run has to be aborted."""
