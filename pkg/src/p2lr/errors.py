"""Exception types shared across the library."""


class P2LRError(Exception):
    """Base class for all library errors."""


class ConfigurationError(P2LRError, ValueError):
    """A parameter or parameter combination is invalid or infeasible."""


class InputError(P2LRError, ValueError):
    """Malformed runtime input: bad shapes, non-finite values, bad files."""


class SingularNormalizationError(InputError):
    """A vector that must be L2-normalized has zero norm."""

    def __init__(self, what: str, index: int):
        super().__init__(f"zero-norm {what} at index {index}")
        self.what = what
        self.index = index


class FileFormatError(P2LRError, ValueError):
    """A data or report file does not match its declared format."""


class EmptySelectionWarning(UserWarning):
    """The selected set is empty, so the refinement loss is trivially zero."""
