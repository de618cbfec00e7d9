"""Exception hierarchy.

Three families map onto process exit codes: UsageError -> 1,
DataError -> 2, BridgeError -> 3.
"""


class StoryDecodeError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(StoryDecodeError):
    """Caller passed an invalid parameter."""


class InvalidP(UsageError):
    pass


class InvalidK(UsageError):
    pass


class InvalidTemperature(UsageError):
    pass


class InvalidN(UsageError):
    pass


class LengthMismatch(UsageError):
    pass


class DataError(StoryDecodeError):
    """Input data is unusable for the requested operation."""


class EmptyField(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class EmptyInput(DataError):
    pass


class TooFewRecords(DataError):
    pass


class OutOfVocab(DataError):
    pass


class VocabMismatch(DataError):
    pass


class DegenerateDistribution(DataError):
    pass


class DegenerateMatrix(DataError):
    pass


class DegenerateInput(DataError):
    pass


class ConstantInput(DataError):
    pass


class BridgeError(StoryDecodeError):
    """Failure in the external model bridge."""


class BridgeUnavailable(BridgeError):
    pass


class ProtocolError(BridgeError):
    pass


class VersionMismatch(BridgeError):
    pass


class ContextTooLong(BridgeError):
    pass


class ModelFailure(BridgeError):
    pass


class EmbedderUnavailable(BridgeError):
    pass


def exit_code_for(exc: BaseException) -> int:
    """Process exit code for an exception, per the CLI contract."""
    if isinstance(exc, BridgeError):
        return 3
    if isinstance(exc, DataError):
        return 2
    if isinstance(exc, UsageError):
        return 1
    return 2


def family_of(exc: BaseException) -> str:
    """Error-envelope code for an exception: usage, data, or bridge."""
    if isinstance(exc, BridgeError):
        return "bridge"
    if isinstance(exc, UsageError):
        return "usage"
    return "data"
