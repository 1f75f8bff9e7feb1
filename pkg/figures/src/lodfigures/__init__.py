"""Figure rendering for the multiscale study CSV outputs."""

__version__ = "0.1.0"

from .plots import PlotSpec, SchemaError, guide_series, render

__all__ = ["PlotSpec", "SchemaError", "guide_series", "render"]
