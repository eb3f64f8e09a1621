"""End-to-end run: heatmaps per method, alignment to gaze, scoring, reports."""

from __future__ import annotations

import csv
import json
import logging
import os
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import nn
from ..emphasis import (DEFAULT_MIN_CONFIDENCE, ClassEmphasisDiff, aggregate_class_diffs,
                        emergent_feature_map, frame_emphasis_diffs, read_detections)
from ..heatmap import Heatmap, load_grayscale, load_image, resize_array, resize_bilinear, save_grayscale
from ..lrp import Rule, lrp
from ..metrics import UndefinedMetricError, cosine_similarity, downsample, spearman
from ..spectral import SpectralParams, spectral_residual
from .dataset import FilterPolicy, FrameRecord, filter_frames, load_manifest, read_labels, split_train_test
from .report import ReportTable, ScoreRecord, render_text, summarize, to_json, write_scores

log = logging.getLogger(__name__)

METHOD_KINDS = ("spectral", "lrp", "lrp_driving", "external")
THREADS_ENV = "SALIENCE_ALIGN_THREADS"


class PipelineError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MethodConfig:
    name: str
    kind: str
    model: Path | None = None
    path_template: str | None = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"method {self.name!r}: unknown kind {self.kind!r} (expected one of {METHOD_KINDS})")
        if self.kind in ("lrp", "lrp_driving") and self.model is None:
            raise ConfigError(f"method {self.name!r}: LRP regimes need a model path")
        if self.kind == "external" and not self.path_template:
            raise ConfigError(f"method {self.name!r}: external maps need a path_template")


@dataclass
class TrainingConfig:
    epochs: int = 5
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0


@dataclass
class PipelineConfig:
    manifest: Path
    output_dir: Path
    methods: list[MethodConfig]
    labels: Path | None = None
    seed: int = 0
    workers: int = 0
    split_ratio: float = 0.8
    lrp_rule: Rule = field(default_factory=Rule)
    output_mask: list[float] | None = None
    training: TrainingConfig = field(default_factory=TrainingConfig)
    resolution: str = "gaze"
    downsample: int = 1
    filter: FilterPolicy = field(default_factory=FilterPolicy)
    spectral: SpectralParams = field(default_factory=SpectralParams)
    emphasis_pairs: list[tuple[str, str]] = field(default_factory=list)
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    emergent: tuple[str, str] | None = None
    emergent_frames: int = 4
    max_failure_fraction: float = 0.5

    def __post_init__(self):
        names = [m.name for m in self.methods]
        if not names:
            raise ConfigError("no methods enabled")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate method names: {names}")
        if self.resolution not in ("gaze", "method"):
            raise ConfigError(f"resolution policy must be 'gaze' or 'method', got {self.resolution!r}")
        for pair in self.emphasis_pairs + ([self.emergent] if self.emergent else []):
            for name in pair:
                if name not in names:
                    raise ConfigError(f"emphasis/emergent refers to unknown method {name!r}")
        if any(m.kind == "lrp_driving" for m in self.methods) and self.labels is None:
            raise ConfigError("lrp_driving needs a labels file")


def load_config(path) -> PipelineConfig:
    """Read a JSON config; relative paths resolve against the config's directory."""
    path = Path(path)
    base = path.parent
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None

    def p(v):
        return None if v is None else base / v

    try:
        methods = [MethodConfig(m["name"], m["kind"], p(m.get("model")), m.get("path_template"))
                   for m in d["methods"]]
        lrp_cfg = d.get("lrp", {})
        rule_name = lrp_cfg.get("rule", "epsilon")
        rule = Rule(rule_name, float(lrp_cfg.get("epsilon", 1e-7)) if rule_name == "epsilon" else 0.0)
        emph = d.get("emphasis", {})
        emerg = d.get("emergent")
        cfg = PipelineConfig(
            manifest=p(d["manifest"]),
            output_dir=p(d.get("output_dir", "report")),
            methods=methods,
            labels=p(d.get("labels")),
            seed=int(d.get("seed", 0)),
            workers=int(d.get("workers", 0)),
            split_ratio=float(d.get("split_ratio", 0.8)),
            lrp_rule=rule,
            output_mask=lrp_cfg.get("output_mask"),
            training=TrainingConfig(**d.get("training", {})),
            resolution=d.get("comparison", {}).get("resolution", "gaze"),
            downsample=int(d.get("comparison", {}).get("downsample", 1)),
            filter=FilterPolicy(**d.get("filter", {})),
            spectral=SpectralParams(**d.get("spectral", {})),
            emphasis_pairs=[tuple(pair) for pair in emph.get("pairs", [])],
            min_confidence=float(emph.get("min_confidence", DEFAULT_MIN_CONFIDENCE)),
            emergent=(emerg["driving"], emerg["imagenet"]) if emerg else None,
            emergent_frames=int(emerg.get("frames", 4)) if emerg else 0,
            max_failure_fraction=float(d.get("max_failure_fraction", 0.5)),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg


def resolve_workers(requested: int = 0) -> int:
    """Worker count: the request (0 = CPU count), capped by SALIENCE_ALIGN_THREADS."""
    n = requested if requested > 0 else (os.cpu_count() or 1)
    try:
        cap = int(os.environ.get(THREADS_ENV, "0") or 0)
    except ValueError:
        cap = 0
    return max(1, min(n, cap) if cap > 0 else n)


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


# --------------------------------------------------------------------------
# heatmap generation
# --------------------------------------------------------------------------

def model_heatmap(model: nn.ModelSpec, image: np.ndarray, mask, rule: Rule) -> Heatmap:
    """LRP heatmap at the image's own resolution, resizing through the model input."""
    h, w = image.shape[:2]
    mh, mw, mc = model.input_shape
    if image.shape[2] != mc:
        if mc == 3 and image.shape[2] == 1:
            image = np.repeat(image, 3, axis=2)
        else:
            raise PipelineError(f"model {model.name!r} wants {mc} channels, image has {image.shape[2]}")
    x = image if (h, w) == (mh, mw) else resize_array(image, mw, mh)
    hm = lrp(model, x, mask, rule).input_heatmap
    return hm if hm.shape == (h, w) else resize_bilinear(hm, w, h)


class HeatmapSource:
    """Callable producing one method's heatmap for a frame."""

    def __init__(self, method: MethodConfig, config: PipelineConfig, model: nn.ModelSpec | None = None):
        self.method = method
        self.config = config
        self.model = model

    def __call__(self, rec: FrameRecord, image: np.ndarray) -> Heatmap:
        kind = self.method.kind
        if kind == "spectral":
            return spectral_residual(image, self.config.spectral)
        if kind == "external":
            rel = self.method.path_template.format(frame_id=rec.frame_id, run_id=rec.run_id,
                                                   frame_idx=rec.frame_idx)
            return load_grayscale(self.config.manifest.parent / rel)
        return model_heatmap(self.model, image, self.config.output_mask, self.config.lrp_rule)


def train_driving_model(backbone: nn.ModelSpec, records, labels: dict, config: PipelineConfig,
                        workers: int, name: str) -> tuple[nn.ModelSpec, list[float], int]:
    """Fit the dense head on train-split frames; labels rescaled to [0, 1]."""
    train = [r for r in records if r.split == "train" and r.frame_id in labels]
    if not train:
        raise PipelineError("no labelled training frames for the driving regime")
    mh, mw, _ = backbone.input_shape

    def features(rec):
        img = load_image(rec.image_path)
        if img.shape[:2] != (mh, mw):
            img = resize_array(img, mw, mh)
        return nn.head_features(backbone, img)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        X = np.array(list(pool.map(features, train)))
    Y = nn.rescale_unit(np.array([labels[r.frame_id] for r in train]))
    t = config.training
    result = nn.train_head(X, Y, t.epochs, t.batch_size, t.learning_rate, t.seed)
    model = nn.with_head(backbone, result.weight, result.bias, name=name)
    return model, result.loss_trace, len(train)


# --------------------------------------------------------------------------
# per-frame work
# --------------------------------------------------------------------------

@dataclass
class FrameOutcome:
    record: FrameRecord
    scores: dict[str, tuple[float, float]]
    failures: dict[str, str]
    emphasis: dict[tuple[str, str], list[tuple[str, float]]]
    emphasis_skips: Counter
    emergent: Heatmap | None = None


def _score(hm: Heatmap, gaze: Heatmap, config: PipelineConfig) -> tuple[float, float]:
    if config.resolution == "gaze":
        if hm.shape != gaze.shape:
            hm = resize_bilinear(hm, gaze.width, gaze.height)
    elif hm.shape != gaze.shape:
        gaze = resize_bilinear(gaze, hm.width, hm.height)
    hm, gaze = downsample(hm, config.downsample), downsample(gaze, config.downsample)
    return cosine_similarity(hm, gaze), spearman(hm, gaze)


def process_frame(rec: FrameRecord, sources: dict[str, HeatmapSource], config: PipelineConfig,
                  detections: dict, want_emergent: bool) -> FrameOutcome:
    image = load_image(rec.image_path)
    gaze = load_grayscale(rec.gaze_path)
    h, w = image.shape[:2]
    maps, scores, failures = {}, {}, {}
    for name, source in sources.items():
        try:
            hm = source(rec, image)
            maps[name] = hm if hm.shape == (h, w) else resize_bilinear(hm, w, h)
            scores[name] = _score(hm, gaze, config)
        except UndefinedMetricError as exc:
            failures[name] = f"undefined metric: {exc}"
        except (OSError, ValueError) as exc:
            failures[name] = f"{type(exc).__name__}: {exc}"
    emphasis, skips = {}, Counter()
    dets = detections.get(rec.frame_id, [])
    for a, b in config.emphasis_pairs:
        if a in maps and b in maps and dets:
            emphasis[(a, b)] = frame_emphasis_diffs(maps[a], maps[b], dets, config.min_confidence, skips)
    emergent = None
    if want_emergent and config.emergent and all(n in maps for n in config.emergent):
        emergent = emergent_feature_map(maps[config.emergent[0]], maps[config.emergent[1]])
    return FrameOutcome(rec, scores, failures, emphasis, skips, emergent)


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------

@dataclass
class PipelineResult:
    report: ReportTable
    scores: list[ScoreRecord]
    skipped: list[tuple[str, str, str]]
    emphasis: dict[tuple[str, str], list[ClassEmphasisDiff]]
    emergent_paths: list[Path]
    n_filtered: int
    output_dir: Path


def build_sources(config: PipelineConfig, records, workers: int) -> tuple[dict[str, HeatmapSource], dict]:
    sources, notes = {}, {}
    cache: dict[Path, nn.ModelSpec] = {}
    labels = read_labels(config.labels) if config.labels else {}
    for m in config.methods:
        model = None
        if m.kind in ("lrp", "lrp_driving"):
            if m.model not in cache:
                cache[m.model] = nn.load_model(m.model)
            model = cache[m.model]
        if m.kind == "lrp_driving":
            model, trace, n_train = train_driving_model(model, records, labels, config, workers, m.name)
            models_dir = config.output_dir / "models"
            models_dir.mkdir(parents=True, exist_ok=True)
            nn.save_model(model, models_dir / f"{_slug(m.name)}.json")
            notes[f"{m.name} head training"] = (
                f"{n_train} train frames, epochs={config.training.epochs}, batch={config.training.batch_size}, "
                f"lr={config.training.learning_rate:g}, final mse={trace[-1]:.6g}")
        sources[m.name] = HeatmapSource(m, config, model)
    return sources, notes


def run_pipeline(config: PipelineConfig, workers: int | None = None) -> PipelineResult:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(config.workers if workers is None else workers)

    records = load_manifest(config.manifest)
    if any(r.split is None for r in records):
        log.info("manifest has unassigned splits; splitting %.2f with seed %d", config.split_ratio, config.seed)
        records = split_train_test(records, config.split_ratio, config.seed)
    filtered = filter_frames(records, config.filter)
    sources, notes = build_sources(config, records, workers)

    detections = {}
    for path in sorted({r.detections_path for r in filtered if r.detections_path is not None}):
        detections.update(read_detections(path))

    emergent_ids = {r.frame_id for r in filtered[: config.emergent_frames]} if config.emergent else set()

    def work(rec):
        return process_frame(rec, sources, config, detections, rec.frame_id in emergent_ids)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(work, filtered))

    method_names = [m.name for m in config.methods]
    fail_counts = Counter(name for o in outcomes for name in o.failures)
    for name in method_names:
        if filtered and fail_counts[name] > config.max_failure_fraction * len(filtered):
            examples = [o.failures[name] for o in outcomes if name in o.failures][:3]
            raise PipelineError(
                f"method {name!r} failed on {fail_counts[name]} of {len(filtered)} frames; e.g. {examples}")

    scores, skipped = [], []
    pair_diffs = {pair: [] for pair in config.emphasis_pairs}
    emph_skips = Counter()
    emergent_paths = []
    for o in outcomes:
        fid = o.record.frame_id
        if o.failures:
            for name, reason in o.failures.items():
                skipped.append((fid, name, reason))
            continue
        for name in method_names:
            cos, rho = o.scores[name]
            scores.append(ScoreRecord(fid, name, cos, rho, o.record.attention))
        for pair, diffs in o.emphasis.items():
            pair_diffs[pair].extend(diffs)
        emph_skips.update(o.emphasis_skips)
        if o.emergent is not None:
            (out / "emergent").mkdir(exist_ok=True)
            path = out / "emergent" / f"{fid}.pgm"
            save_grayscale(o.emergent, path)
            emergent_paths.append(path)

    n_skipped_frames = len({s[0] for s in skipped})
    meta = {
        "frames in manifest": len(records),
        "frame filter": config.filter.describe(),
        "frames after filter": len(filtered),
        "frames scored": len(filtered) - n_skipped_frames,
        "frames skipped": n_skipped_frames,
        "resolution policy": ("method maps resized (bilinear) to gaze resolution" if config.resolution == "gaze"
                              else "gaze resized (bilinear) to method resolution"),
        "downsample factor": config.downsample,
        "lrp rule": f"{config.lrp_rule.name} (epsilon={config.lrp_rule.epsilon:g})",
        "lrp output mask": "all ones" if config.output_mask is None else list(config.output_mask),
        "log transform": "natural log, non-positive scores excluded",
    }
    meta.update(notes)
    report = summarize(scores, method_names, meta)
    emphasis = {pair: aggregate_class_diffs(d) for pair, d in pair_diffs.items()}

    write_scores(out / "scores.csv", scores)
    with open(out / "skipped.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("frame_id", "method", "reason"))
        writer.writerows(skipped)
    (out / "report.txt").write_text(render_text(report), encoding="utf-8")
    (out / "report.json").write_text(to_json(report), encoding="utf-8")
    for (a, b), rows in emphasis.items():
        with open(out / f"emphasis_{_slug(a)}__minus__{_slug(b)}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("class_name", "mean_diff", "n_observations"))
            for r in rows:
                writer.writerow((r.class_name, repr(r.mean_diff), r.n_observations))
    if emph_skips:
        log.info("emphasis analysis skipped: %s", dict(sorted(emph_skips.items())))
    return PipelineResult(report, scores, skipped, emphasis, emergent_paths, len(filtered), out)
