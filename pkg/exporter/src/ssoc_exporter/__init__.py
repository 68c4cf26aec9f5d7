"""Image-to-embedding exporter for the ssoc engine's file formats."""

from .datasets import DatasetError, load_dataset, synthetic_shapes
from .encoder import EncoderError, ImageEncoder
from .export import ExportSpec, ExportSummary, run_export

__all__ = [
    "DatasetError",
    "EncoderError",
    "ExportSpec",
    "ExportSummary",
    "ImageEncoder",
    "load_dataset",
    "run_export",
    "synthetic_shapes",
]

__version__ = "0.1.0"
