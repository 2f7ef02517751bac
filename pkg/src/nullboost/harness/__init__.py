"""Data loading, run orchestration and the command line."""
from .data import Dataset, make_synthetic, split
from .run import ConfigError, RunConfig, export_predictions, report, run

__all__ = ["ConfigError", "Dataset", "RunConfig", "export_predictions", "make_synthetic", "report", "run", "split"]
