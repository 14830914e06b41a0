"""Accuracy-vs-epoch figures from difflearn record and aggregate files."""
from .figure import PlotSpec, default_labels, render, series_payload
from .records import (
    AGGREGATE_HEADER,
    RECORD_HEADER,
    PlotError,
    SchemaVersionMismatchError,
    Series,
    load_series,
)

__version__ = "0.1.0"

__all__ = [
    "AGGREGATE_HEADER",
    "RECORD_HEADER",
    "PlotError",
    "PlotSpec",
    "SchemaVersionMismatchError",
    "Series",
    "default_labels",
    "load_series",
    "render",
    "series_payload",
    "__version__",
]
