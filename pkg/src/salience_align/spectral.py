"""Spectral-residual saliency (Hou & Zhang, 2007), the bottom-up baseline.

The log-amplitude spectrum of a natural image is locally smooth; whatever
sticks out of its local average carries the "unexpected" content.  Keeping
only that residual (with the original phase) and transforming back gives a
map that lights up anomalous regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .heatmap import Heatmap, normalize_max, resize_array

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
LOG_DELTA = 1e-8


@dataclass(frozen=True)
class SpectralParams:
    internal_size: int = 64
    avg_kernel: int = 3
    blur_sigma: float = 2.5

    def __post_init__(self):
        if self.internal_size < 8:
            raise ValueError(f"internal_size must be >= 8, got {self.internal_size}")
        if self.avg_kernel < 3 or self.avg_kernel % 2 == 0:
            raise ValueError(f"avg_kernel must be odd and >= 3, got {self.avg_kernel}")
        if not self.blur_sigma > 0:
            raise ValueError(f"blur_sigma must be positive, got {self.blur_sigma}")


def to_luminance(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"expected a grayscale or RGB image, got shape {image.shape}")
    if image.shape[2] == 1:
        return image[:, :, 0]
    return image @ LUMA_WEIGHTS


def saliency_field(gray: np.ndarray, params: SpectralParams) -> np.ndarray:
    """Blurred residual energy at the internal working resolution."""
    n = params.internal_size
    small = resize_array(gray, n, n)
    spectrum = np.fft.fft2(small)
    amplitude = np.abs(spectrum)
    log_amp = np.log(amplitude + LOG_DELTA)
    # spectra are periodic, so the local average wraps around
    residual = log_amp - ndimage.uniform_filter(log_amp, size=params.avg_kernel, mode="wrap")
    # unit phasor; bins with zero amplitude have no phase and contribute nothing
    phase = np.divide(spectrum, amplitude, out=np.zeros_like(spectrum), where=amplitude > 0)
    energy = np.abs(np.fft.ifft2(np.exp(residual) * phase)) ** 2
    return ndimage.gaussian_filter(energy, sigma=params.blur_sigma, mode="reflect")


def spectral_residual(image: np.ndarray, params: SpectralParams | None = None) -> Heatmap:
    """Saliency map with the input's dimensions, max-normalized to [0, 255]."""
    params = params or SpectralParams()
    gray = to_luminance(image)
    if gray.shape[0] < 2 or gray.shape[1] < 2:
        raise ValueError(f"image too small for spectral saliency: {gray.shape}")
    field = saliency_field(gray, params)
    h, w = gray.shape
    field = np.maximum(resize_array(field, w, h), 0.0)
    return normalize_max(Heatmap(field))
