"""Exception types shared across the package."""


class ProbmagError(Exception):
    """Base class for all errors raised by probmag."""


class ConfigError(ProbmagError, ValueError):
    """Invalid user configuration (CLI exit code 2)."""


class NumericalError(ProbmagError, ArithmeticError):
    """A computation reached a singular or unstable point (CLI exit code 3)."""


class PostSelectionImpossible(NumericalError):
    pass


class SingularSignal(NumericalError):
    pass


class InsensitiveWorkingPoint(NumericalError):
    pass


class IntegrationUnstable(NumericalError):
    pass


class FrameError(ProbmagError, ValueError):
    """Drive frequencies do not define the supported rotating frame."""


class WeakFieldWarning(UserWarning):
    """gamma_c * B * tau is not small; closed forms that drop nuclear phases degrade."""


class PowerBroadeningWarning(UserWarning):
    """Nuclear Rabi frequency at or above the hyperfine coupling."""
