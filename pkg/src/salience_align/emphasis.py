"""Object-level emphasis of heatmaps and subtractive emergent-feature maps."""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

from .heatmap import DimensionMismatchError, Heatmap, clamp_negative, clip, normalize_max, subtract

DEFAULT_MIN_CONFIDENCE = 0.3
DETECTION_FIELDS = ("frame_id", "class_name", "confidence", "x", "y", "w", "h")


class EmphasisError(ValueError):
    pass


class ZeroMassError(EmphasisError):
    pass


class EmptyBoxError(EmphasisError):
    pass


@dataclass(frozen=True)
class Detection:
    class_name: str
    bbox: tuple[float, float, float, float]  # x, y, w, h in pixels
    confidence: float = 1.0

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise EmphasisError(f"detection {self.class_name!r} has non-positive size {w}x{h}")
        if not 0.0 <= self.confidence <= 1.0:
            raise EmphasisError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class ClassEmphasisDiff:
    class_name: str
    mean_diff: float
    n_observations: int


def clamp_bbox(bbox, width: int, height: int) -> tuple[int, int, int, int] | None:
    """Pixel slice bounds ``(x0, y0, x1, y1)`` inside the image, or None if empty."""
    x, y, w, h = bbox
    x0 = min(max(int(round(x)), 0), width)
    y0 = min(max(int(round(y)), 0), height)
    x1 = min(max(int(round(x + w)), 0), width)
    y1 = min(max(int(round(y + h)), 0), height)
    if x1 <= x0 or y1 <= y0:
        return None
    return x0, y0, x1, y1


def emphasis_proportion(hm: Heatmap, bbox) -> float:
    """Share of the heatmap's total mass that lies inside ``bbox``."""
    total = hm.values.sum()
    if not total > 0:
        raise ZeroMassError("heatmap has no mass")
    box = clamp_bbox(bbox, hm.width, hm.height)
    if box is None:
        raise EmptyBoxError(f"bbox {bbox} is empty after clamping to {hm.width}x{hm.height}")
    x0, y0, x1, y1 = box
    return float(hm.values[y0:y1, x0:x1].sum() / total)


def frame_emphasis_diffs(map_a: Heatmap, map_b: Heatmap, detections: Iterable[Detection],
                         min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                         skipped: Counter | None = None) -> list[tuple[str, float]]:
    """``(class, proportion_a - proportion_b)`` for each usable detection in one frame."""
    skipped = skipped if skipped is not None else Counter()
    if map_a.shape != map_b.shape:
        raise DimensionMismatchError(f"maps differ in shape: {map_a.shape} vs {map_b.shape}")
    if not (map_a.values.sum() > 0 and map_b.values.sum() > 0):
        skipped["zero_mass_frame"] += 1
        return []
    out = []
    for det in detections:
        if det.confidence < min_confidence:
            skipped["low_confidence"] += 1
            continue
        if clamp_bbox(det.bbox, map_a.width, map_a.height) is None:
            skipped["empty_box"] += 1
            continue
        out.append((det.class_name, emphasis_proportion(map_a, det.bbox) - emphasis_proportion(map_b, det.bbox)))
    return out


def aggregate_class_diffs(diffs: Iterable[tuple[str, float]]) -> list[ClassEmphasisDiff]:
    """Per-class mean of the differences, largest mean first."""
    sums: dict[str, float] = defaultdict(float)
    counts: Counter = Counter()
    for name, d in diffs:
        sums[name] += d
        counts[name] += 1
    rows = [ClassEmphasisDiff(name, sums[name] / counts[name], counts[name]) for name in counts]
    rows.sort(key=lambda r: (-r.mean_diff, r.class_name))
    return rows


def class_emphasis_diff(maps_a: Mapping[str, Heatmap], maps_b: Mapping[str, Heatmap],
                        detections: Mapping[str, list[Detection]],
                        min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                        skipped: Counter | None = None) -> list[ClassEmphasisDiff]:
    """Mean emphasis difference (a minus b) per object class over all frames."""
    if set(maps_a) != set(maps_b):
        raise EmphasisError("maps_a and maps_b cover different frame sets")
    missing = set(detections) - set(maps_a)
    if missing:
        raise EmphasisError(f"detections reference frames without maps: {sorted(missing)[:5]}")
    diffs = []
    for frame_id in sorted(detections):
        diffs.extend(frame_emphasis_diffs(maps_a[frame_id], maps_b[frame_id], detections[frame_id],
                                          min_confidence, skipped))
    return aggregate_class_diffs(diffs)


def emergent_feature_map(driving: Heatmap, imagenet: Heatmap, clip_hi: float = 100.0) -> Heatmap:
    """Where the task-trained map outweighs the generic one.

    Both maps are max-normalized to 255, clipped to ``[0, clip_hi]``, the
    generic map is subtracted and negatives are dropped.
    """
    if driving.shape != imagenet.shape:
        raise DimensionMismatchError(f"maps differ in shape: {driving.shape} vs {imagenet.shape}")
    a = clip(normalize_max(driving), 0.0, clip_hi)
    b = clip(normalize_max(imagenet), 0.0, clip_hi)
    return clamp_negative(subtract(a, b))


# --------------------------------------------------------------------------
# detections file
# --------------------------------------------------------------------------

def read_detections(path) -> dict[str, list[Detection]]:
    """CSV with header ``frame_id,class_name,confidence,x,y,w,h``."""
    out: dict[str, list[Detection]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(DETECTION_FIELDS) - set(reader.fieldnames):
            raise EmphasisError(f"{path}: detections header must contain {', '.join(DETECTION_FIELDS)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                det = Detection(row["class_name"],
                                tuple(float(row[k]) for k in ("x", "y", "w", "h")),
                                float(row["confidence"]))
            except (TypeError, ValueError) as exc:
                raise EmphasisError(f"{path}:{line_no}: {exc}") from None
            out[row["frame_id"]].append(det)
    return dict(out)


def write_detections(path, detections: Mapping[str, list[Detection]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DETECTION_FIELDS)
        for frame_id, dets in detections.items():
            for d in dets:
                writer.writerow([frame_id, d.class_name, repr(float(d.confidence)), *(repr(float(v)) for v in d.bbox)])

