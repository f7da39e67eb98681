"""
Statistics collection for training runs:
- Tally: running mean/std of per-step observations
- MetricsWriter: append-only metrics CSV
"""

from blockcraft.statistics.tally import Tally
from blockcraft.statistics.metrics import MetricsWriter, metrics_header, read_metrics

__all__ = ["Tally", "MetricsWriter", "metrics_header", "read_metrics"]
