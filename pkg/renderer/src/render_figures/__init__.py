"""Batch figure renderer for attnlab experiment CSVs (display only)."""

__version__ = "0.1.0"

from .panels import PanelSpec, contact_sheet, render
from .schema import SchemaMismatch

__all__ = ["PanelSpec", "SchemaMismatch", "contact_sheet", "render", "__version__"]
