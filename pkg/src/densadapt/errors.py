"""Exception hierarchy shared by all modules."""


class DensAdaptError(Exception):
    """Base class for all package errors."""


class MalformedMeshError(DensAdaptError, ValueError):
    """Face indices out of range, repeated vertices or isolated vertices."""


class ConfigError(DensAdaptError, ValueError):
    """Invalid parameter, inconsistent inputs or unknown option."""


class MeshIOError(DensAdaptError, OSError):
    """Missing file or unparsable record."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)


class SolverError(DensAdaptError, RuntimeError):
    """Sparse factorization or solve failed."""


class NumericalError(DensAdaptError, RuntimeError):
    """Non-finite energy or gradient encountered during optimization."""


class DegenerateConfigurationError(DensAdaptError, ValueError):
    """Landmark configuration does not determine a unique rotation."""
