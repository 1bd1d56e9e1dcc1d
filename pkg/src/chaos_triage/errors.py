"""Exception hierarchy shared by all modules."""


class ChaosTriageError(Exception):
    """Base class for every error raised by this package."""


class SingularPointError(ChaosTriageError, ValueError):
    """A state lies inside the singular set of a system."""

    def __init__(self, system, point):
        self.system = system
        self.point = tuple(float(v) for v in point)
        super().__init__(f"{system}: state {self.point} is in the singular set")


class NonFiniteStateError(ChaosTriageError, FloatingPointError):
    """Overflow or NaN during integration.

    ``trajectory`` holds the samples up to the last finite state.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class LadderLevelError(ChaosTriageError):
    def __init__(self, level, cause):
        self.level = level
        self.cause = cause
        super().__init__(f"refinement level {level} failed: {cause}")


class EmptyInputError(ChaosTriageError, ValueError):
    pass


class UnsortedInputError(ChaosTriageError, ValueError):
    pass


class TooShortError(ChaosTriageError, ValueError):
    pass


class DegenerateVarianceError(ChaosTriageError, ValueError):
    pass


class NoMaximaError(ChaosTriageError):
    """No local maxima after the transient, e.g. convergence to an equilibrium."""


class NonConvergedError(ChaosTriageError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class BadBracketError(ChaosTriageError, ValueError):
    pass


class UnresolvableError(ChaosTriageError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class TooFewError(ChaosTriageError, ValueError):
    pass


class NonMonotoneError(ChaosTriageError, ValueError):
    pass


class ConfigError(ChaosTriageError, ValueError):
    pass
