"""Rumor detection from user correlation and propagation structure."""

__version__ = "0.1.0"

from .data import LABELS, Dataset, Instance, compute_metrics, generate_synthetic, load_dataset  # noqa: E402
from .estimator import ReportClassifier  # noqa: E402

__all__ = [
    "LABELS",
    "Dataset",
    "Instance",
    "ReportClassifier",
    "compute_metrics",
    "generate_synthetic",
    "load_dataset",
]
