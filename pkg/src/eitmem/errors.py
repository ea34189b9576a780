class EITMemError(Exception):
    """Base class for all eitmem errors"""


class ParameterError(EITMemError, ValueError):
    """A parameter is outside its physical or numerical domain"""


class RangeError(ParameterError):
    """A value falls outside a tabulated range or a pulse window"""


class DegenerateInputError(ParameterError):
    """An operation needs a nonzero pulse or spin wave"""


class NumericalInstabilityError(EITMemError, ArithmeticError):
    """The solver state stopped being finite or stopped conserving energy"""

    def __init__(self, step, time_us, detail="non-finite solver state"):
        self.step = step
        self.time_us = time_us
        super().__init__(f"{detail} at step {step} (t = {time_us:.6g} us)")


class OptimizationStalledError(EITMemError):
    """Retrieved energy dropped below the floor during signal iteration"""


class ConvergenceError(EITMemError):
    """An iterative eigen-solve hit its cycle cap"""

    def __init__(self, message, last_ratio=None):
        self.last_ratio = last_ratio
        super().__init__(message)


class ConfigError(EITMemError):
    """Invalid run configuration

    Args:
        field_path: Dotted path of the offending configuration field
        message: Human-readable reason
    """

    def __init__(self, field_path, message):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")
