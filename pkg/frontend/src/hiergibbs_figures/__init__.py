"""Static figure rendering for hiergibbs experiment CSVs."""

__version__ = "0.1.0"

from .render import FigureSpec, SchemaError, read_table, render
