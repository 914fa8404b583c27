"""fixy_export: converts trained CNN checkpoints into the neutral
manifest + weight-blob interchange format consumed by the hardware
compiler, and generates synthetic models for framework-free testing."""

from .keras_export import ExportError, ExportRecipe, UnsupportedLayersError, export_model, run_export
from .synthetic import export_synthetic

__all__ = [
    "ExportError",
    "ExportRecipe",
    "UnsupportedLayersError",
    "export_model",
    "export_synthetic",
    "run_export",
]

__version__ = "0.1.0"
