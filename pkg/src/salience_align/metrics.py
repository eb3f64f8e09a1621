"""Heatmap-to-gaze similarity: cosine similarity and Spearman rank correlation."""

from __future__ import annotations

import numpy as np

from .heatmap import DimensionMismatchError, Heatmap


class UndefinedMetricError(ValueError):
    """The metric has no value for these inputs (frame should be skipped)."""


class ZeroVectorError(UndefinedMetricError):
    pass


class ZeroRankVarianceError(UndefinedMetricError):
    pass


def _flat_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    va = a.values if isinstance(a, Heatmap) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, Heatmap) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"cannot compare shapes {va.shape} and {vb.shape}")
    return va.ravel().astype(np.float64), vb.ravel().astype(np.float64)


def cosine_similarity(a, b) -> float:
    """``A.B / (|A| |B|)`` over the flattened maps."""
    x, y = _flat_pair(a, b)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ZeroVectorError("cosine similarity is undefined for an all-zero map")
    return float(np.dot(x / nx, y / ny))


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x).ravel()
    order = np.argsort(x, kind="stable")
    xs = x[order]
    # boundaries of runs of equal values in sorted order
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sx, sy = np.sqrt(np.dot(dx, dx)), np.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise ZeroRankVarianceError("correlation is undefined for a constant input")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def spearman(a, b) -> float:
    """Pearson correlation of the average-rank vectors."""
    x, y = _flat_pair(a, b)
    return pearson(average_ranks(x), average_ranks(y))


def downsample(hm: Heatmap, factor: int) -> Heatmap:
    """Block-mean downsampling by an integer factor (ragged edges dropped)."""
    if factor == 1:
        return hm
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    h, w = hm.height // factor, hm.width // factor
    if h == 0 or w == 0:
        raise ValueError(f"factor {factor} too large for {hm.width}x{hm.height}")
    v = hm.values[: h * factor, : w * factor].reshape(h, factor, w, factor)
    return Heatmap(v.mean(axis=(1, 3)))
