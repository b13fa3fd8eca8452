"""Exception types raised across the package."""


class PomdpError(Exception):
    """Base class for errors raised by pomdp_nac."""


class ModelValidationError(PomdpError, ValueError):
    pass


class DegenerateObservation(PomdpError):
    """The observation has zero probability under the predicted belief."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class DimensionMismatch(PomdpError, ValueError):
    pass


class SizeOverflow(PomdpError, ValueError):
    pass


class SolveFailure(PomdpError):
    pass


class SearchSpaceTooLarge(PomdpError):
    pass


class UnboundedRatio(PomdpError):
    pass


class SupportMismatch(PomdpError):
    pass


class NotErgodic(PomdpError):
    pass


class DegenerateHistory(PomdpError):
    pass


class ConfigParseError(PomdpError, ValueError):
    pass


class ConfigValidationError(PomdpError, ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
