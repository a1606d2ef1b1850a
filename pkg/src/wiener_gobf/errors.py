"""Exceptions and warning categories shared across the toolkit."""


class InvalidSpecError(ValueError):
    """A signal / system / configuration object violates its invariants."""


class UnstableFilterError(ValueError):
    """A filter required to be stable has poles on or outside the unit circle."""


class SingularityError(ArithmeticError):
    """A frequency-response denominator vanished on the evaluation grid."""


class DegenerateExcitationError(ValueError):
    """An excited bin carries (numerically) no input power."""


class RankDeficiencyError(RuntimeError):
    """The normal system of a parametric fit is singular; try lower orders."""


class EstimationError(RuntimeError):
    """A stage of the identification chain failed; the message carries the stage tag."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage '{stage}': {message}")


class PoleStabilizationWarning(UserWarning):
    """Unstable pole estimates were reflected into the unit circle."""


class RepeatedPoleWarning(UserWarning):
    """Estimated poles are (nearly) repeated; rate guarantees assume distinct poles."""


class IllConditionedBasisWarning(UserWarning):
    """The projection basis is numerically ill conditioned."""


class RankDeficiencyWarning(UserWarning):
    """A least-squares problem was rank deficient; minimum-norm solution returned."""
