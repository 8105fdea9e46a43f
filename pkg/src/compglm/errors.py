"""Exception types shared across the package.

Validation problems raise ValueError (or DataError for file ingestion);
numerical failures raise the dedicated subclasses below so callers (and
the CLI) can distinguish user error from solver breakdown.
"""


class CompglmError(Exception):
    """Base class for numerical failures raised by this package."""


class SolverError(CompglmError):
    """Proximal solver could not make progress (line search underflow etc.)."""


class SelectionError(CompglmError):
    """Model selection over the regularization path failed."""


class InferenceError(CompglmError):
    """De-biasing quadratic program or interval construction failed."""


class SimulationError(CompglmError):
    """Synthetic data generation could not satisfy its configuration."""


class DataError(ValueError):
    """Malformed or invalid input data (CSV parsing, negative counts, ...)."""
