"""Exception hierarchy shared across the package."""


class SpeechTraitsError(Exception):
    """Base class for all package errors."""


class DomainError(SpeechTraitsError):
    """Input violates a documented precondition or uses an unknown value."""


class ArityError(DomainError):
    """Wrong number of labels for the category (e.g. two labels for a single-label trait)."""


class UnmappableLabel(DomainError):
    """A raw dataset label the mapping table deliberately discards (record must be dropped)."""


class ParseError(SpeechTraitsError):
    """Structurally malformed input file."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ClipRejected(SpeechTraitsError):
    """A clip failed preprocessing; ``reason`` is a stable code for the rejection report."""

    SHORT_CLIP = "short_clip"
    DECODE_ERROR = "decode_error"
    MISSING_AUDIO = "missing_audio"

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class ShapeError(SpeechTraitsError):
    """Tensor dimensions do not match."""


class NumericalError(SpeechTraitsError):
    """A non-finite value appeared where finite math was required."""


class TrainingError(SpeechTraitsError):
    """Training diverged; carries the last finite state when available."""

    def __init__(self, message: str, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class FormatError(SpeechTraitsError):
    """A serialized artifact has the wrong magic, version, or framing."""


class CompatibilityError(SpeechTraitsError):
    """A serialized artifact was produced against an incompatible taxonomy."""


class BackendError(SpeechTraitsError):
    """Feature-extraction backend failure."""


class BackendUnavailable(BackendError):
    """The external extractor process cannot be reached."""


class ProtocolError(BackendError):
    """The extractor wire exchange violated the protocol (header/payload mismatch)."""


class ConfigError(SpeechTraitsError):
    """Invalid run configuration (unknown key, missing weights, bad template id)."""
