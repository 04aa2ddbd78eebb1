"""Exception hierarchy for the toolkit."""


class KolpotError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatch(KolpotError):
    """Matrix or signature shapes are inconsistent."""


class NotSymmetric(KolpotError):
    """A matrix required to be symmetric is not."""


class NotPositiveDefinite(KolpotError):
    """A matrix required to be positive definite is not."""


class RankDeficient(KolpotError):
    """A coupling block does not have full column rank."""


class KalmanFailure(KolpotError):
    """The controllability Gramian is not positive definite."""


class NonPositiveTime(KolpotError):
    """A time argument required to be positive is not."""


class NonPositiveScale(KolpotError):
    """A dilation scale required to be positive is not."""


class NonPositiveLevel(KolpotError):
    """A level argument required to be positive is not."""


class NonPositiveDuration(KolpotError):
    """A step duration required to be positive is not."""


class LambdaOutOfRange(KolpotError):
    """The level-progression ratio must lie strictly between 0 and 1."""


class TimeSignViolation(KolpotError):
    """A time argument has the wrong sign for the requested quantity."""


class TimeOrderViolation(KolpotError):
    """A pair of times violates the required ordering."""


class NotBoundaryPoint(KolpotError):
    """The anchor point is not on the domain boundary at grid tolerance."""


class EmptyCompact(KolpotError):
    """The discrete compact has no atoms."""


class LPFailure(KolpotError):
    """The linear program did not reach a usable status."""

    def __init__(self, status, message=""):
        self.status = status
        super().__init__(f"LP solve failed (status={status}): {message}")


class InsufficientTerms(KolpotError):
    """Too few series terms for a trend diagnosis."""


class ConfigError(KolpotError):
    """A configuration file could not be parsed or validated."""
