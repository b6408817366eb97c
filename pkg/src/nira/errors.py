"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the command-line front end can map
failures to the documented process status without inspecting types.
"""


class NiraError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(NiraError):
    exit_code = 2


class DataError(NiraError):
    exit_code = 3


class NumericalError(NiraError):
    exit_code = 4


# signal-level
class AllZeroSignal(DataError):
    pass


class SignalTooShort(DataError):
    pass


class DegenerateFrame(DataError):
    pass


class UnsupportedAudio(DataError):
    pass


# voice activity
class NoActivity(DataError):
    pass


class TooFewSpeechFrames(DataError):
    pass


# room simulation / ground truth
class InvalidGeometry(ConfigError):
    pass


class DecayRangeUnreachable(DataError):
    pass


class EmptyTail(DataError):
    pass


class NoiseTooShort(DataError):
    pass


# learners
class ModelShapeMismatch(DataError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class Diverged(NumericalError):
    pass


class EmptyDataset(DataError):
    pass


class DegenerateTargets(DataError):
    pass


# evaluation / orchestration
class NonPositiveTruth(DataError):
    pass


class JoinFailure(DataError):
    pass


class FormatError(DataError):
    pass
