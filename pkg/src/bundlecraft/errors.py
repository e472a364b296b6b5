"""Shared exception types.

Exit-code mapping for the CLI lives in ``cli.py``: usage / input problems
map to exit 2, numerical failures to exit 3.
"""


class BundlecraftError(Exception):
    """Base class for all package errors."""


class ShapeError(BundlecraftError):
    """Operands have incompatible dimensions."""


class GraphError(BundlecraftError):
    """Computation-graph contract violation (non-scalar root, double backward, ...)."""


class NonFiniteError(BundlecraftError):
    """An operation produced NaN or Inf; this is always a hard error."""


class DegenerateVectorError(BundlecraftError):
    """A vector with zero norm was passed where a direction is required."""


class CorpusFormatError(BundlecraftError):
    """A corpus file does not conform to its declared format."""


class IntegrityError(BundlecraftError):
    """Cross-file referential integrity violated (unknown token, duplicate edge, ...)."""


class InsufficientDataError(BundlecraftError):
    """Not enough data to carry out the requested operation."""


class SynthSpecError(BundlecraftError):
    """A synthetic-corpus spec is invalid or infeasible."""


class DivergenceError(BundlecraftError):
    """Training produced a non-finite loss."""


class ConfigError(BundlecraftError):
    """Unknown or malformed configuration key/value."""
