"""Exception hierarchy.

Every error maps onto one CLI exit code: data problems exit 1, backend
problems exit 2, configuration problems exit 3.
"""

from __future__ import annotations


class PolyviewError(Exception):
    exit_code = 1
    code = "error"

    def __init__(self, message: str, *, code: str | None = None) -> None:
        super().__init__(message)
        if code is not None:
            self.code = code


class DataError(PolyviewError):
    exit_code = 1
    code = "data_error"


class BackendError(PolyviewError):
    exit_code = 2
    code = "backend_error"


class ConfigError(PolyviewError):
    exit_code = 3
    code = "config_error"


class CorpusError(DataError):
    """A corpus or table record was rejected.

    ``path`` and ``line`` anchor the diagnostic to the offending input line
    when the record came from a file.
    """

    def __init__(
        self,
        code: str,
        message: str,
        *,
        path: str | None = None,
        line: int | None = None,
        field: str | None = None,
        record_id: str | None = None,
    ) -> None:
        self.path = path
        self.line = line
        self.field = field
        self.record_id = record_id
        where = ""
        if path is not None and line is not None:
            where = f"{path}:{line}: "
        elif line is not None:
            where = f"line {line}: "
        detail = f" (field {field!r})" if field else ""
        super().__init__(f"{where}{code}: {message}{detail}", code=code)


class MissingAnnotationError(DataError):
    code = "missing_annotation"


class MissingViewError(DataError):
    code = "missing_view"

    def __init__(self, doc_id: str, view: str) -> None:
        self.doc_id = doc_id
        self.view = view
        super().__init__(f"document {doc_id!r} has no score for weighted view {view!r}")


class ReplyParseError(BackendError):
    """The model answered, but not in the expected format."""

    code = "unparseable_reply"

    def __init__(self, message: str, reply: str) -> None:
        self.reply = reply
        super().__init__(f"{message}: {reply!r}")


class MockMissError(BackendError):
    code = "mock_miss"

    def __init__(self, prompt_hash: str) -> None:
        self.prompt_hash = prompt_hash
        super().__init__(f"mock_miss: no transcript entry for prompt {prompt_hash}")


class TransportError(BackendError):
    code = "transport_error"


class LogprobsUnsupportedError(BackendError):
    code = "logprobs_unsupported"
