"""Toolkit for synthesizing and evaluating remote-sensing change-analysis
instruction datasets from bitemporal image pairs, change maps and captions."""

__version__ = "0.1.0"
