"""Exception types shared across the bytetrace pipeline."""


class BytetraceError(Exception):
    """Base class for every error raised by this package."""


class BadSignature(BytetraceError):
    """A method signature does not match the accepted grammar."""


class MalformedSmali(BytetraceError):
    """A smali source line could not be classified.

    Carries the file path and 1-based line number so batch runs can point
    at the offending input.
    """

    def __init__(self, path: str, line: int, reason: str):
        self.path = path
        self.line = line
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")


class DuplicateMethod(BytetraceError):
    """The same canonical method signature was parsed twice."""


class BadConfig(BytetraceError):
    """A config, source-list, sink-rule, manifest, or ground-truth file is invalid."""


class BackendUnavailable(BytetraceError):
    """The summarization backend could not be reached (transport failure, timeout, non-2xx)."""


class InvalidResponse(BytetraceError):
    """The backend answered, but the payload could not be parsed into a summary."""


class OutOfRange(BytetraceError):
    """A numeric score lies outside its documented range."""
