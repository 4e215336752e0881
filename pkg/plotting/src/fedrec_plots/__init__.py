"""Rendering of simulator log CSVs into the standard comparison figures:
convergence curves, unique-client bars, selection heatmaps, and trade-off
sweeps. Consumes only the documented CSV files; no simulator coupling."""

__version__ = "0.1.0"
