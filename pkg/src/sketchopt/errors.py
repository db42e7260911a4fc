"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes (see cli.EXIT_*): configuration and
usage problems, transport failures talking to a scoring service, and
numeric failures (non-finite losses or gradients) are kept distinct so
callers can react differently to each.
"""


class SketchoptError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SketchoptError, ValueError):
    """Invalid configuration value (bad bounds, zero strokes, ...)."""


class DomainError(SketchoptError, ValueError):
    """Mathematical domain violation (t outside [0,1], zero vector, ...)."""


class ContractError(SketchoptError, ValueError):
    """Caller broke an API contract (shape mismatch, malformed input)."""


class TransportError(SketchoptError, RuntimeError):
    """Scoring service unreachable, timed out, or failed mid-request."""


class ProtocolError(TransportError):
    """The service answered, but the frame violated the wire protocol."""


class NumericError(SketchoptError, RuntimeError):
    """Non-finite loss or gradient; the run aborts with a diagnostic."""
