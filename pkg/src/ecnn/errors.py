"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class EcnnError(Exception):
    exit_code = 1


class ShapeError(EcnnError, ValueError):
    exit_code = 1


class ConfigError(EcnnError, ValueError):
    exit_code = 1


class ParseError(ConfigError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(EcnnError, ValueError):
    exit_code = 2


class UsageError(EcnnError, RuntimeError):
    exit_code = 1


class DivergenceError(EcnnError, FloatingPointError):
    exit_code = 3

    def __init__(self, iteration, loss):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss
