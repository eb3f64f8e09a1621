"""Saliency heatmaps (LRP, spectral residual) compared against human gaze."""

__version__ = "0.1.0"
