"""Heatmap container, binary PGM/PPM I/O and elementwise transforms.

A heatmap is a real-valued 2-D field stored row-major as a ``(height, width)``
float64 array.  Values stay real until :func:`save_grayscale` quantizes them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class PNMError(ValueError):
    """Base class for PGM/PPM parse failures."""


class MalformedHeaderError(PNMError):
    pass


class UnsupportedMagicError(PNMError):
    pass


class UnsupportedMaxvalError(PNMError):
    pass


class TruncatedDataError(PNMError):
    pass


class HeatmapValueError(ValueError):
    """A heatmap holds values that the requested operation cannot accept."""


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Heatmap:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"heatmap needs a non-empty 2-D field, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_flat(cls, width: int, height: int, flat) -> "Heatmap":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != width * height:
            raise ValueError(f"expected {width * height} values, got {flat.size}")
        return cls(flat.reshape(height, width))

    @classmethod
    def zeros(cls, width: int, height: int) -> "Heatmap":
        return cls(np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def __repr__(self):
        return f"Heatmap({self.width}x{self.height}, min={self.values.min():.4g}, max={self.values.max():.4g})"


# --------------------------------------------------------------------------
# PNM I/O
# --------------------------------------------------------------------------

def _read_header(data: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Parse a netpbm header: magic, width, height, maxval.

    Returns the magic and the integer fields plus the offset of the first
    raster byte.  Comment lines (``#``) are allowed between tokens.
    """
    if len(data) < 2:
        raise MalformedHeaderError(f"{path}: file too short for a PNM header")
    magic = data[:2]
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise MalformedHeaderError(f"{path}: malformed header near byte {start}")
        fields.append(int(data[start:pos]))
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise MalformedHeaderError(f"{path}: missing whitespace after maxval")
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"{path}: non-positive dimensions {width}x{height}")
    return magic, width, height, maxval, pos + 1


def _read_raster(path, accepted: dict[bytes, int]) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in accepted:
        raise UnsupportedMagicError(f"{path}: unsupported magic {magic!r}")
    magic, width, height, maxval, offset = _read_header(data, path)
    if maxval != 255:
        raise UnsupportedMaxvalError(f"{path}: maxval {maxval} unsupported (only 255)")
    channels = accepted[magic]
    need = width * height * channels
    raster = data[offset:offset + need]
    if len(raster) < need:
        raise TruncatedDataError(f"{path}: expected {need} pixel bytes, found {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    return arr.reshape(height, width, channels)


def load_grayscale(path) -> Heatmap:
    """Read an 8-bit binary PGM (``P5``, maxval 255) into a heatmap."""
    return Heatmap(_read_raster(path, {b"P5": 1})[:, :, 0])


def load_image(path) -> np.ndarray:
    """Read a P5 or P6 file as an ``(h, w, c)`` float array in [0, 255]."""
    return _read_raster(path, {b"P5": 1, b"P6": 3})


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half-up to uint8, refusing anything outside [0, 255]."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 255:
        bad = values[~np.isfinite(values) | (values < 0) | (values > 255)]
        raise HeatmapValueError(f"value out of range [0, 255]: {bad.size} offending, e.g. {bad.flat[0]}")
    return np.floor(values + 0.5).astype(np.uint8)


def _write(path, magic: bytes, pixels: np.ndarray, width: int, height: int):
    header = b"%s\n%d %d\n255\n" % (magic, width, height)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes())
    os.replace(tmp, path)


def save_grayscale(hm: Heatmap, path) -> None:
    """Write ``hm`` as a P5 PGM; values are rounded half-up."""
    _write(path, b"P5", quantize(hm.values), hm.width, hm.height)


def save_image(image: np.ndarray, path) -> None:
    """Write an ``(h, w, 1)`` or ``(h, w, 3)`` array as P5 or P6."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    if c not in (1, 3):
        raise ValueError(f"cannot write {c}-channel image")
    _write(path, b"P5" if c == 1 else b"P6", quantize(image), w, h)


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------

def _bilinear_axis(n_in: int, n_out: int):
    # pixel centres at (i + 0.5) / n in normalized coordinates, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_array(arr: np.ndarray, new_width: int, new_height: int) -> np.ndarray:
    """Bilinear resize of the two leading axes of ``arr`` (extra axes ride along)."""
    if new_width <= 0 or new_height <= 0:
        raise ValueError(f"resize target must be positive, got {new_width}x{new_height}")
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    if (h, w) == (new_height, new_width):
        return arr.copy()
    y0, y1, fy = _bilinear_axis(h, new_height)
    x0, x1, fx = _bilinear_axis(w, new_width)
    extra = (1,) * (arr.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)
    rows = arr[y0] * (1 - fy) + arr[y1] * fy
    return rows[:, x0] * (1 - fx) + rows[:, x1] * fx


def resize_bilinear(hm: Heatmap, new_width: int, new_height: int) -> Heatmap:
    return Heatmap(resize_array(hm.values, new_width, new_height))


def normalize_max(hm: Heatmap) -> Heatmap:
    """Scale so the maximum is exactly 255; an all-zero map stays zero."""
    v = hm.values
    if v.min() < 0:
        raise HeatmapValueError("normalize_max requires non-negative values")
    peak = v.max()
    if peak == 0:
        return Heatmap(np.zeros_like(v))
    with np.errstate(over="ignore"):
        scale = 255.0 / peak
    # a subnormal peak overflows the scale; divide first instead
    out = v * scale if np.isfinite(scale) else (v / peak) * 255.0
    # pin the peak: v * (255 / peak) can land one ulp off 255
    out[v == peak] = 255.0
    return Heatmap(out)


def clip(hm: Heatmap, lo: float, hi: float) -> Heatmap:
    if not lo < hi:
        raise ValueError(f"clip needs lo < hi, got [{lo}, {hi}]")
    return Heatmap(np.clip(hm.values, lo, hi))


def subtract(a: Heatmap, b: Heatmap) -> Heatmap:
    """Signed elementwise ``a - b``."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cannot subtract {b.width}x{b.height} from {a.width}x{a.height}")
    return Heatmap(a.values - b.values)


def clamp_negative(hm: Heatmap) -> Heatmap:
    return Heatmap(np.maximum(hm.values, 0.0))
