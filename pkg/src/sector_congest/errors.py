"""Exception types shared across the package."""


class SectorCongestError(Exception):
    """Base class for all errors raised by this package."""


class RecordError(SectorCongestError):
    """A message line could not be turned into a RawMessage.

    ``field`` names the offending key (or ``None`` when the whole line is bad).
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class MalformedRecord(RecordError):
    pass


class UnknownMessageType(RecordError):
    pass


class InvariantViolation(RecordError):
    pass


class StorageFailure(SectorCongestError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class MissingCollection(SectorCongestError):
    pass


class UnknownField(SectorCongestError):
    pass


class NoMessages(SectorCongestError):
    pass


class NotAssigned(SectorCongestError):
    pass


class LedgerCorrupt(SectorCongestError):
    pass


class DayNotPrepared(SectorCongestError):
    pass


class TooFewCurves(SectorCongestError):
    pass


class EmptyWindow(SectorCongestError):
    pass


class TooFewSamples(SectorCongestError):
    pass


class EmptyDataset(SectorCongestError):
    pass


class SchemaMismatch(SectorCongestError):
    pass


class EmptyArrays(SectorCongestError):
    pass


class LengthMismatch(SectorCongestError):
    pass


class DatasetTooSmall(SectorCongestError):
    pass


class NotFound(SectorCongestError):
    pass


class BadRequest(SectorCongestError):
    pass


class MissingData(SectorCongestError):
    pass


class InvalidSpec(SectorCongestError):
    pass


class UnknownCase(SectorCongestError):
    pass
