"""Exception hierarchy for preflab."""


class PreflabError(Exception):
    """Base class for all library errors."""


class DegenerateDistributionError(PreflabError):
    """A triplet distribution carries no off-diagonal (preference) mass."""


class InfiniteLogOddsError(PreflabError):
    """A supported pair has a one-sided preference probability (0 or 1)."""


class ScoreRangeError(PreflabError):
    """Scores too large to exponentiate safely."""


class UndefinedScoreError(PreflabError):
    """log(p_plus / p_minus) is undefined because p_minus vanishes where p_plus does not."""


class UnsupportedSettingError(PreflabError):
    """The requested exact formula does not apply to this input."""


class RankDeficiencyError(PreflabError):
    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class DegenerateClassError(PreflabError):
    """Every variational restart had a vanishing denominator."""


class TrainingDivergedError(PreflabError):
    """Training produced non-finite losses for every learning rate."""


class RejectionSamplingError(PreflabError):
    """The sampler could not draw a pair with distinct responses."""


class UndefinedAccuracyError(PreflabError):
    """The target has no untied pair under the test distribution."""


class EmptySubsetError(PreflabError):
    """A margin slice selected no pairs."""
