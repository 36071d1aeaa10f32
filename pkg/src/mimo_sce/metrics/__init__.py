"""Objective speech metrics and report assembly."""

from .evaluate import score_channels
from .report import MetricsReport, ReportError, ResultRow, load_results_csv, load_summary_csv, render_summary
from .snr import MetricError, seg_snr, si_sdr
from .stoi import stoi

__all__ = [
    "MetricError",
    "MetricsReport",
    "ReportError",
    "ResultRow",
    "load_results_csv",
    "load_summary_csv",
    "render_summary",
    "score_channels",
    "seg_snr",
    "si_sdr",
    "stoi",
]
