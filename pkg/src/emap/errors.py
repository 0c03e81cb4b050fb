"""Exception types shared across the package."""


class EmapError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(EmapError):
    """A text input file could not be parsed.

    Carries the path and 1-based line number of the offending line.
    """

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class EmptyCloudError(EmapError):
    """A sentence has no in-vocabulary tokens; the caller decides to skip or abort."""

    def __init__(self, doc_id, message="sentence has no in-vocabulary tokens"):
        super().__init__(f"document {doc_id}: {message}")
        self.doc_id = doc_id


class TransportError(EmapError):
    """Invalid transportation-problem input (unbalanced or negative marginals)."""


class MatrixFormatError(EmapError):
    """A persisted distance-matrix file is corrupt or has the wrong format."""
