"""Exception types shared across the package."""


class SemdeblurError(Exception):
    """Base class for all package errors."""


class ParameterError(SemdeblurError, ValueError):
    """Invalid argument: out-of-range value, bad shape, unknown name."""


class AlignmentError(SemdeblurError, ValueError):
    """Degenerate landmark geometry (coincident or collinear points)."""


class ContractError(SemdeblurError, RuntimeError):
    """A documented invariant or call contract was violated."""


class ProtocolError(SemdeblurError, ValueError):
    """Evaluation protocol violated (e.g. probe identity missing from gallery)."""


class ConfigError(SemdeblurError, ValueError):
    """Inconsistent or incomplete run configuration."""


class FileFormatError(SemdeblurError, RuntimeError):
    """Corrupt, truncated, or wrong-kind binary artifact file."""


class CheckpointError(FileFormatError):
    """Checkpoint magic/version/kind mismatch or corrupt payload."""
