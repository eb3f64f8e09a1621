"""Frame manifests, the analysis filter and the seeded train/test split."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("run_id", "frame_idx", "attention", "trivial", "daytime", "split",
                   "image_path", "gaze_path", "detections_path")
ATTENTION = ("attentive", "inattentive")
SPLITS = ("train", "test")


class ManifestError(ValueError):
    pass


class MissingFilesError(ManifestError):
    def __init__(self, paths):
        self.paths = list(paths)
        listing = "\n  ".join(str(p) for p in self.paths)
        super().__init__(f"{len(self.paths)} referenced file(s) missing:\n  {listing}")


@dataclass(frozen=True)
class FrameRecord:
    run_id: str
    frame_idx: int
    attention: str
    trivial: bool
    daytime: bool
    split: str | None
    image_path: Path
    gaze_path: Path
    detections_path: Path | None = None

    @property
    def frame_id(self) -> str:
        return f"{self.run_id}_{self.frame_idx:05d}"

    @property
    def key(self) -> tuple[str, int]:
        return self.run_id, self.frame_idx


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_manifest(path, check_files: bool = True) -> list[FrameRecord]:
    """Read a CSV manifest; paths are relative to the manifest's directory."""
    path = Path(path)
    base = path.parent
    records, seen, missing = [], {}, []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        absent = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if absent:
            raise ManifestError(f"{path}: header lacks column(s) {', '.join(sorted(absent))}")
        for line_no, row in enumerate(reader, start=2):
            try:
                idx = int(row["frame_idx"])
                if idx < 0:
                    raise ValueError(f"frame_idx must be >= 0, got {idx}")
                attention = row["attention"].strip()
                if attention not in ATTENTION:
                    raise ValueError(f"attention must be one of {ATTENTION}, got {attention!r}")
                split = row["split"].strip() or None
                if split is not None and split not in SPLITS:
                    raise ValueError(f"split must be one of {SPLITS} or empty, got {split!r}")
                det = row["detections_path"].strip()
                rec = FrameRecord(
                    run_id=row["run_id"].strip(), frame_idx=idx, attention=attention,
                    trivial=_parse_bool(row["trivial"]), daytime=_parse_bool(row["daytime"]),
                    split=split, image_path=base / row["image_path"].strip(),
                    gaze_path=base / row["gaze_path"].strip(),
                    detections_path=base / det if det else None)
            except (ValueError, AttributeError) as exc:
                raise ManifestError(f"{path}:{line_no}: {exc}") from None
            if rec.key in seen:
                raise ManifestError(
                    f"{path}:{line_no}: duplicate frame key {rec.run_id}/{rec.frame_idx} "
                    f"(first seen on line {seen[rec.key]})")
            seen[rec.key] = line_no
            records.append(rec)
    if check_files:
        for rec in records:
            for p in (rec.image_path, rec.gaze_path, rec.detections_path):
                if p is not None and not p.is_file() and p not in missing:
                    missing.append(p)
        if missing:
            raise MissingFilesError(missing)
    return records


def write_manifest(records, path) -> None:
    path = Path(path)
    base = path.parent

    def rel(p):
        return "" if p is None else Path(os.path.relpath(p, base)).as_posix()

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for r in records:
            writer.writerow([r.run_id, r.frame_idx, r.attention, str(r.trivial).lower(),
                             str(r.daytime).lower(), r.split or "", rel(r.image_path),
                             rel(r.gaze_path), rel(r.detections_path)])


@dataclass(frozen=True)
class FilterPolicy:
    require_nontrivial: bool = True
    require_daytime: bool = True
    require_test: bool = True
    attention: str = "both"  # "both" keeps attentive and inattentive for the ratio

    def __post_init__(self):
        if self.attention not in ("both",) + ATTENTION:
            raise ValueError(f"attention filter must be 'both', 'attentive' or 'inattentive', got {self.attention!r}")

    def accepts(self, r: FrameRecord) -> bool:
        return ((not self.require_nontrivial or not r.trivial)
                and (not self.require_daytime or r.daytime)
                and (not self.require_test or r.split == "test")
                and (self.attention == "both" or r.attention == self.attention))

    def describe(self) -> str:
        terms = []
        if self.require_nontrivial:
            terms.append("trivial == false")
        if self.require_daytime:
            terms.append("daytime == true")
        if self.require_test:
            terms.append("split == test")
        if self.attention != "both":
            terms.append(f"attention == {self.attention}")
        return " AND ".join(terms) or "all frames"


def filter_frames(records, policy: FilterPolicy | None = None) -> list[FrameRecord]:
    policy = policy or FilterPolicy()
    kept = [r for r in records if policy.accepts(r)]
    if not kept:
        log.warning("frame filter (%s) left no frames out of %d", policy.describe(), len(records))
    return kept


def split_train_test(records, ratio: float = 0.8, seed: int = 0) -> list[FrameRecord]:
    """Shuffle with ``seed``; the first floor(ratio * N) become train, the rest test.

    Records come back in their original order with ``split`` filled in.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"train ratio must lie strictly between 0 and 1, got {ratio}")
    records = list(records)
    n_train = math.floor(ratio * len(records))
    order = np.random.default_rng(seed).permutation(len(records))
    train = set(order[:n_train].tolist())
    return [replace(r, split="train" if i in train else "test") for i, r in enumerate(records)]


def read_labels(path) -> dict[str, tuple[float, float]]:
    """Raw ``frame_id -> (yaw, translation)`` from a CSV with those columns."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"frame_id", "yaw", "translation"} <= set(reader.fieldnames or ()):
            raise ManifestError(f"{path}: labels need frame_id, yaw, translation columns")
        for line_no, row in enumerate(reader, start=2):
            try:
                out[row["frame_id"]] = (float(row["yaw"]), float(row["translation"]))
            except ValueError as exc:
                raise ManifestError(f"{path}:{line_no}: {exc}") from None
    return out
