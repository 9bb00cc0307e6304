"""Exception hierarchy.

Every exception carries an ``exit_code`` used by the command-line front end:
3 for malformed or unsupported input, 2 for numerical failure.
"""


class KocpError(Exception):
    exit_code = 3


class InputError(KocpError, ValueError):
    exit_code = 3


class IndexOutOfRangeError(InputError):
    pass


class DimensionMismatchError(InputError):
    pass


class NotSymmetricError(InputError):
    pass


class UnsupportedFamilyError(InputError):
    pass


class SizeCapExceededError(InputError):
    pass


class RedundantConstraintsError(InputError):
    pass


class NotSDDError(InputError):
    pass


class NotInteriorError(InputError):
    pass


class BlockNotPSDError(InputError):
    pass


class NumericalError(KocpError, ArithmeticError):
    exit_code = 2


class EigenFailureError(NumericalError):
    pass


class NewtonDivergenceError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SolverFailureError(NumericalError):
    pass
