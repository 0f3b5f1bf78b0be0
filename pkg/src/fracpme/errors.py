"""Exception hierarchy shared by all modules."""


class FracPMEError(Exception):
    """Base class for errors raised by fracpme."""


class UnsupportedDomainError(FracPMEError):
    pass


class BasisMismatchError(FracPMEError):
    pass


class AdmissibilityError(FracPMEError):
    """An exponent or parameter lies outside the range where a bound is stated."""


class EmptySampleError(FracPMEError):
    pass


class StepRejected(FracPMEError):
    """The implicit inner solve did not converge; the caller should shrink dt."""


class TimeStepUnderflow(FracPMEError):
    pass


class PositivityError(FracPMEError):
    """Clipped negative mass exceeded the allowed fraction of the initial mass."""


class EllipticConvergenceError(FracPMEError):
    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class DegenerateStartError(FracPMEError):
    pass


class InapplicableCheckError(FracPMEError):
    pass


class MissingInputError(FracPMEError):
    pass


class ConfigError(FracPMEError):
    pass
