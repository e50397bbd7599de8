"""Exception hierarchy shared by all thermoqfi modules."""


class ThermoQFIError(Exception):
    """Base class for every error raised by this package."""


class InvalidDimensionError(ThermoQFIError, ValueError):
    pass


class DimensionMismatchError(ThermoQFIError, ValueError):
    pass


class NonHermitianError(ThermoQFIError, ValueError):
    pass


class InvalidStateError(ThermoQFIError, ValueError):
    pass


class TruncationError(ThermoQFIError, ValueError):
    """A Fock truncation is too small for the requested object.

    ``suggested_dim`` carries a dimension that satisfies the guard.
    """

    def __init__(self, message, suggested_dim=None):
        super().__init__(message)
        self.suggested_dim = suggested_dim


class GridTooSmallError(ThermoQFIError, ValueError):
    """The phase-space grid does not cover the state.

    ``suggested_half_width`` is measured from the grid centre.
    """

    def __init__(self, message, suggested_half_width=None):
        super().__init__(message)
        self.suggested_half_width = suggested_half_width


class SingularStateError(ThermoQFIError, ValueError):
    pass


class KernelDegenerateError(ThermoQFIError, ArithmeticError):
    pass


class UnstableRegimeError(ThermoQFIError, RuntimeError):
    pass
