"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""


class WTError(Exception):
    exit_code = 1


class ConfigError(WTError):
    """Invalid configuration or usage."""

    exit_code = 1


class ContractError(WTError, ValueError):
    """A caller broke a documented precondition."""

    exit_code = 1


class DimensionError(ContractError):
    """Incompatible tensor shapes for an operation."""


class DataError(WTError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")


class IntegrityError(DataError):
    """Data parsed but violates an invariant (ordering, emptiness, version)."""


class NumericError(WTError):
    """NaN/Inf during training, or a failed gradient check."""

    exit_code = 3
