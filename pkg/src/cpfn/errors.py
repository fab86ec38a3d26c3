"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its stable contract (2 config, 3 data, 4 numerical).
"""


class CPFNError(Exception):
    exit_code = 1


class ConfigError(CPFNError):
    exit_code = 2


class DataError(CPFNError):
    exit_code = 3


class NumericalError(CPFNError, ArithmeticError):
    exit_code = 4


class InvalidConfig(ConfigError, ValueError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class SizeMismatch(DimensionMismatch):
    pass


class InvalidTau(ConfigError, ValueError):
    pass


class BudgetExceeded(ConfigError, ValueError):
    pass


class ParseError(DataError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyDataset(DataError, ValueError):
    pass


class CorruptModel(DataError, ValueError):
    pass


class NonFiniteValue(NumericalError, FloatingPointError):
    pass


class NonFiniteLoss(NumericalError, FloatingPointError):
    """Training hit a NaN/Inf loss.

    ``model`` holds the last finite snapshot and ``trace`` the epochs
    completed before the abort.
    """

    def __init__(self, message, model=None, trace=None):
        super().__init__(message)
        self.model = model
        self.trace = trace


class EmptyNeighborhood(NumericalError, ValueError):
    pass


class AcceptanceStall(NumericalError, RuntimeError):
    pass


class SingularOrigin(NumericalError, ValueError):
    pass


class DegenerateColumnWarning(UserWarning):
    pass
