"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: ValueError (including
SizeLimitError) exits 2, FormatError subclasses exit 3, NumericError
exits 4.
"""


class SizeLimitError(ValueError):
    """An input exceeds a documented size cap (e.g. the exact-solver limit)."""


class FormatError(Exception):
    """Base class for malformed or unsupported input files."""


class DatasetFormatError(FormatError):
    """Malformed instance or labeled-dataset text; carries a line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TsplibError(FormatError):
    """Malformed or unsupported TSPLIB input."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class WeightFormatError(FormatError):
    """Malformed model weight file; names the field that failed."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class PairingError(FormatError):
    """Instance files and auxiliary files (heatmaps, labels) do not pair up."""


class NumericError(RuntimeError):
    """Non-finite values produced during a numeric computation."""

    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer
