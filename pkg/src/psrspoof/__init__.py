"""Simulated GNSS pseudo-range spoofing corpora and online spoofing detectors."""

__version__ = "0.1.0"
