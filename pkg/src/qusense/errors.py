"""Exception hierarchy shared by all modules."""


class QusenseError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgument(QusenseError, ValueError):
    pass


class NumericalFailure(QusenseError, ArithmeticError):
    pass


class ModelConsistencyError(QusenseError):
    """The Hamiltonian or channel violates a structural property the protocol relies on."""


class OptimizationFailure(QusenseError):
    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class DegenerateCodeError(QusenseError):
    def __init__(self, message: str, k: int):
        super().__init__(message)
        self.k = k


class CompileError(QusenseError):
    pass


class CalibrationError(QusenseError):
    pass


class DataCorruptionError(QusenseError):
    pass


class ConfigError(QusenseError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
