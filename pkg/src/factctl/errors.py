"""Exception types shared across the factctl package."""


class FactctlError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(FactctlError):
    """A record violated one of its invariants."""


class RecordParseError(ValidationError):
    """A line of an input file could not be parsed into a valid record."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ConfigError(FactctlError):
    """Bad configuration; the message names the offending field."""


class BackendError(FactctlError):
    """A model backend call failed."""


class TransportError(BackendError):
    """Network-level failure after exhausting retries."""

    def __init__(self, message, attempts):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts


class HTTPStatusError(BackendError):
    """Non-2xx response from the model endpoint."""

    def __init__(self, status, body_excerpt):
        super().__init__(f"HTTP {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class CapabilityUnsupported(BackendError):
    """The backend cannot serve the requested operation (e.g. token probabilities)."""


class SegmentationFailed(FactctlError):
    """The model reply could not be parsed into a list of facts."""

    def __init__(self, raw_reply):
        excerpt = raw_reply[:200]
        super().__init__(f"no list items detected in segmenter reply: {excerpt!r}")
        self.raw_reply = raw_reply


class EmptyMerge(FactctlError):
    """merge() was called with an empty set of retained facts."""


class MissingLabel(FactctlError):
    """The oracle label table has no entry for a (question, fact) pair."""


class VerdictUnparseable(FactctlError):
    """The judge reply contained no recognizable True/False verdict."""

    def __init__(self, raw_reply):
        super().__init__(f"no True/False verdict in judge reply: {raw_reply[:200]!r}")
        self.raw_reply = raw_reply


class SimWorldError(FactctlError):
    """A simulated-world lookup failed (unknown entity or fact)."""
