"""Exception hierarchy shared across the scanner."""


class ScanError(Exception):
    """Base class for every error this package raises deliberately."""


class ModelNotFoundError(ScanError):
    """Input path does not exist or is unreadable."""


class UnrecognizedFormatError(ScanError):
    """Input is neither a SavedModel directory nor a parseable graph file."""


class GraphParseError(ScanError):
    """Serialized bytes do not decode into a well-formed graph."""


class TooLargeError(GraphParseError):
    """Input exceeds the size guard (decompression-bomb defence)."""


class NoServableMetaGraphError(ScanError):
    """SavedModel holds multiple meta-graphs and none is tagged 'serve'."""


class RuleParseError(ScanError):
    """Rule override file is malformed; message carries field diagnostics."""


class DuplicateRuleError(RuleParseError):
    """Two rules in one override file share (op_type, predicate)."""


class UnknownNodeError(ScanError):
    """Internal consistency failure: a hit references a missing node id."""


class DigestOverflowError(ScanError):
    """Even the minimal triage digest exceeds the prompt byte budget."""


class TriageError(ScanError):
    """Base class for triage transport failures (always fail-open)."""


class TriageTimeout(TriageError):
    pass


class TriageHttpError(TriageError):
    def __init__(self, status: int, message: str = ""):
        super().__init__(message or f"triage endpoint returned HTTP {status}")
        self.status = status


class TriageAuthMissing(TriageError):
    """The configured API-key environment variable is unset."""
