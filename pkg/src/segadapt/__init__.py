"""Discrete-event exemplar of a self-adaptive RGB-D semantic segmentation pipeline."""

__version__ = "0.1.0"
