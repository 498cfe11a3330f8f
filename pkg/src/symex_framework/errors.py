"""
Exception hierarchy for the symbolic-execution toolkit
"""

from typing import Optional


class SymexError(Exception):
    """Base class for all toolkit errors"""


class SnippetLoadError(SymexError):
    """A snippet file could not be read or identified"""


class BackendError(SymexError):
    """An agent backend failed to answer (transport, auth, empty reply)"""


class SchemaValidationError(SymexError):
    """An agent response did not match its role's schema"""


class StageError(SymexError):
    """A pipeline stage failed terminally"""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message


class WrapperValidationError(SymexError):
    """Wrapper source does not expose a valid KLEE-compatible FFI surface"""

    def __init__(self, message: str, function: Optional[str] = None):
        super().__init__(message)
        self.function = function


class ToolchainError(SymexError):
    """The external compiler is missing or timed out"""


class ExecutorError(SymexError):
    """The symbolic executor is missing, crashed, or its output is unusable"""


class MalformedRecordError(SymexError):
    """An error file does not follow the KLEE error grammar"""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class HarnessError(SymexError):
    """A harness cannot be generated for the given signatures"""


class GraphBuildError(SymexError):
    """Inputs to graph construction are inconsistent"""


class JsonLdImportError(SymexError):
    """A JSON-LD document cannot be turned back into a graph"""


class EmptyCorpusError(SymexError):
    """Metrics were requested over zero files"""
