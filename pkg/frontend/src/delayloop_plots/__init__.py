"""Three-panel figure renderer for delayloop CSV time series."""

from .render import PanelSpec, SchemaError, read_series, render

__version__ = "0.1.0"

__all__ = ["PanelSpec", "SchemaError", "read_series", "render", "__version__"]
