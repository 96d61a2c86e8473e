"""Exception hierarchy shared across fwtriage modules."""


class FwTriageError(Exception):
    """Base class for all errors raised by fwtriage."""


# -- digests -----------------------------------------------------------------

class DigestError(FwTriageError, ValueError):
    pass


class InputTooShort(DigestError):
    pass


class InsufficientComplexity(DigestError):
    pass


class MalformedDigest(DigestError):
    pass


# -- similarity index ----------------------------------------------------------

class DuplicateIdentifier(FwTriageError, KeyError):
    pass


class UnknownIdentifier(FwTriageError, KeyError):
    pass


class CorpusTooLarge(FwTriageError, ValueError):
    pass


class IoFailure(FwTriageError, OSError):
    pass


# -- firmware ingest -------------------------------------------------------------

class UnreadableArchive(FwTriageError):
    pass


class NotSparse(FwTriageError, ValueError):
    pass


class CorruptChunkHeader(FwTriageError, ValueError):
    pass


class CrcMismatch(FwTriageError, ValueError):
    pass


class DuplicateFirmware(FwTriageError):
    def __init__(self, md5, message=None):
        super().__init__(message or f"firmware {md5} already imported")
        self.md5 = md5


class SystemImageNotFound(FwTriageError):
    pass


# -- enrichment / reports ----------------------------------------------------------

class EmptyString(FwTriageError, ValueError):
    pass


class EmptySample(FwTriageError, ValueError):
    pass


# -- catalog -----------------------------------------------------------------------

class _KeyMessage(KeyError):
    # KeyError's str() quotes the key; these carry a sentence instead
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DuplicateId(FwTriageError, _KeyMessage):
    pass


class NotFound(FwTriageError, _KeyMessage):
    pass
