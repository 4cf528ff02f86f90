"""plotkit: deterministic figures from experiment CSV reports."""

from .csvio import Table, read_table
from .errors import PlotkitError, SchemaError
from .figures import KINDS, FigureSpec, build_figure, render

__version__ = "0.1.0"

__all__ = [
    "KINDS",
    "FigureSpec",
    "PlotkitError",
    "SchemaError",
    "Table",
    "build_figure",
    "read_table",
    "render",
    "__version__",
]
