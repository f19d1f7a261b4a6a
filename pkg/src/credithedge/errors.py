"""Exception types shared across the pipeline.

Two broad families matter to callers: input problems (bad files, bad
configuration, insufficient data) and numerical failures (solvers,
degenerate windows). The CLI maps them to exit codes 1 and 2.
"""


class CreditHedgeError(Exception):
    """Base class for all pipeline errors."""


class InputError(CreditHedgeError):
    """Bad or missing input data / configuration."""


class SchemaError(InputError):
    """CSV schema violation; carries file, line and column context."""

    def __init__(self, message, file=None, line=None, column=None):
        parts = [message]
        if file is not None:
            parts.append(f"file={file}")
        if line is not None:
            parts.append(f"line={line}")
        if column is not None:
            parts.append(f"column={column}")
        super().__init__(" | ".join(str(p) for p in parts))
        self.file = file
        self.line = line
        self.column = column


class NumericalError(CreditHedgeError):
    """Numerical failure (root finding, rank deficiency, degenerate windows)."""


class DegenerateWindowError(NumericalError):
    """A rolling-window fit could not be performed on this window."""
