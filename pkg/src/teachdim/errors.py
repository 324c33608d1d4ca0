"""Exception hierarchy shared by all teachdim modules."""


class TeachDimError(Exception):
    """Base class for every error raised by this package."""


class InvariantViolation(TeachDimError, ValueError):
    """A data structure failed one of its structural checks."""


class ParseError(TeachDimError, ValueError):
    """A file could not be decoded into the expected structure."""


class InvalidShape(TeachDimError, ValueError):
    """Generator parameters do not describe a valid instance."""


class UnreachableState(TeachDimError):
    def __init__(self, state: int, message: str = ""):
        self.state = state
        super().__init__(message or f"state {state} is unreachable from every supported start")


class MissingNextAction(TeachDimError, ValueError):
    """A SARSA update was requested without the trailing action."""


class LevelViolation(TeachDimError):
    """A teacher used a power its level does not grant."""


class DomainError(TeachDimError, ValueError):
    """Arguments outside the domain of an analytic formula."""


class TooLarge(TeachDimError, ValueError):
    """Input exceeds the size an exact solver accepts."""


class CertificationFailure(TeachDimError):
    """A simulated session disagreed with the exact oracle."""


class BudgetExceeded(TeachDimError):
    def __init__(self, result):
        self.result = result
        super().__init__(f"step budget exhausted after {result.total_steps} steps")
