"""Exception hierarchy shared by all modules.

Each class carries the process exit code the command-line front end maps it to.
"""


class DeconfError(Exception):
    exit_code = 1


class DimensionError(DeconfError, ValueError):
    pass


class ParameterError(DeconfError, ValueError):
    pass


class ValidationError(DeconfError, ValueError):
    pass


class DegenerateError(DeconfError, ValueError):
    pass


class ConfigError(DeconfError, ValueError):
    pass


class TrainingError(DeconfError, ArithmeticError):
    exit_code = 3


class NumericalError(DeconfError, ArithmeticError):
    exit_code = 3


class EvaluationError(DeconfError, RuntimeError):
    pass


class BundleIOError(DeconfError, OSError):
    exit_code = 2
