"""Seeded synthetic driving-like dataset standing in for a real gaze corpus.

Each frame is a flat grey road scene with mild texture, one red "task
object" (labelled ``traffic light``) and a few distractor boxes in other
hues of the same luminance.  The task object's size and horizontal position
set the frame's raw translation and yaw labels.  Gaze is a Gaussian blob on
the task object for attentive frames and on a random distractor otherwise.

Alongside the data the generator writes two models sharing one architecture
(conv/relu/pool backbone, global average pooling, dropout 0.2, dense 2):

* ``random``: every weight Glorot-uniform, biases zero;
* ``pretrained``: a fixed generic backbone (colour-opponent and edge filters)
  under a randomly initialised head.

and a pipeline config ``fixture.cfg`` that runs spectral residual plus the
three LRP regimes over the test split.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .. import nn
from ..emphasis import Detection, write_detections
from ..heatmap import save_grayscale, save_image, Heatmap
from .dataset import FrameRecord, split_train_test, write_manifest

TASK_CLASS = "traffic light"
DISTRACTOR_CLASSES = ("car", "person", "bicycle", "stop sign")
TASK_RGB = np.array([210.0, 40.0, 40.0])
# distractor hues, rescaled below to the task object's luminance
DISTRACTOR_HUES = (np.array([40.0, 200.0, 40.0]), np.array([50.0, 60.0, 230.0]),
                   np.array([40.0, 170.0, 200.0]))
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class FixtureSpec:
    n_frames: int = 600
    n_runs: int = 4
    image_width: int = 96
    image_height: int = 54
    gaze_width: int = 192
    gaze_height: int = 108
    n_distractors: int = 3
    object_min: int = 7
    object_max: int = 15
    attentive_fraction: float = 0.75
    trivial_fraction: float = 0.1
    night_fraction: float = 0.1
    train_ratio: float = 0.8
    gaze_sigma: float = 0.6  # blob sigma as a fraction of the object's size
    background_noise: float = 4.0
    false_detection_rate: float = 0.2
    conv_channels: int = 8

    def __post_init__(self):
        if self.n_frames < 1 or self.n_runs < 1:
            raise ValueError("n_frames and n_runs must be positive")
        if not self.object_min <= self.object_max < min(self.image_width, self.image_height):
            raise ValueError("object size range must fit inside the image")
        for name in ("attentive_fraction", "trivial_fraction", "night_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fixture keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "FixtureSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def interleave(n: int, fraction: float, phase: float = 0.0) -> np.ndarray:
    """Boolean mask with exactly round(fraction * n) Trues, evenly spread."""
    target = int(round(fraction * n))
    mask = np.zeros(n, dtype=bool)
    if target:
        mask[np.floor((np.arange(target) + phase) * n / target).astype(np.intp)] = True
    return mask


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------

def fixture_architecture(spec: FixtureSpec, name: str) -> nn.ModelSpec:
    c = spec.conv_channels
    layers = [
        nn.conv2d(c, (3, 3)), nn.relu(), nn.maxpool2d(2),
        nn.conv2d(c, (3, 3)), nn.relu(), nn.maxpool2d(2),
        nn.global_average_pool(), nn.dropout(0.2), nn.dense(2),
    ]
    return nn.ModelSpec(name, (spec.image_height, spec.image_width, 3), layers,
                        preprocess_scale=np.full(3, 1.0 / 255.0))


def pretrained_backbone_weights(channels: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """First-layer filters: three colour-opponent detectors, one luminance
    blob, four signed edge detectors.  Layer two box-sums each channel, which
    keeps pooled features near unit scale so the head trains quickly."""
    if channels < 8:
        raise ValueError("the generic backbone needs at least 8 channels")
    w1 = np.zeros((3, 3, 3, channels))
    opp = np.array([[1.0, -0.5, -0.5], [-0.5, 1.0, -0.5], [-0.5, -0.5, 1.0]])
    for k in range(3):
        w1[1, 1, :, k] = 2.0 * opp[k]
    w1[1, 1, :, 3] = LUMA
    sobel = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 4.0
    for k, kern in enumerate((sobel, -sobel, sobel.T, -sobel.T)):
        w1[:, :, :, 4 + k] = kern[:, :, None] * LUMA[None, None, :]
    w2 = np.zeros((3, 3, channels, channels))
    for k in range(channels):
        w2[:, :, k, k] = 1.0
    return w1, w2


def build_fixture_models(spec: FixtureSpec, seed: int) -> dict[str, nn.ModelSpec]:
    arch = fixture_architecture(spec, "random")
    random_model = nn.init_glorot(arch, seed + 1)
    base = nn.init_glorot(replace(arch, name="pretrained"), seed + 2)
    w1, w2 = pretrained_backbone_weights(spec.conv_channels)
    c = spec.conv_channels
    # luminance channel is offset so flat grey background stays near zero
    b1 = np.zeros(c)
    b1[3] = -0.45
    pre = base.with_layer(0, replace(base.layers[0], weight=w1, bias=b1))
    pre = pre.with_layer(3, replace(pre.layers[3], weight=w2, bias=np.zeros(c)))
    return {"random": random_model, "pretrained": pre}


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------

def _match_luma(rgb: np.ndarray, luma: float) -> np.ndarray:
    return np.clip(rgb * (luma / float(rgb @ LUMA)), 0, 255)


def _place_boxes(rng, spec: FixtureSpec, count: int) -> list[tuple[int, int, int, int]]:
    """Non-overlapping (x, y, w, h) boxes, best effort."""
    boxes = []
    W, H = spec.image_width, spec.image_height
    for _ in range(count):
        for _attempt in range(200):
            w = int(rng.integers(spec.object_min, spec.object_max + 1))
            h = int(rng.integers(spec.object_min, spec.object_max + 1))
            x = int(rng.integers(1, W - w - 1))
            y = int(rng.integers(1, H - h - 1))
            if all(x + w + 2 <= bx or bx + bw + 2 <= x or y + h + 2 <= by or by + bh + 2 <= y
                   for bx, by, bw, bh in boxes):
                boxes.append((x, y, w, h))
                break
    return boxes


def gaussian_blob(width: int, height: int, cx: float, cy: float, sigma: float) -> np.ndarray:
    """Peak-255 Gaussian centred at pixel-centre coordinates (cx, cy)."""
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    g = np.exp(-((xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2) / (2 * sigma ** 2))
    return 255.0 * g / g.max()


@dataclass
class Scene:
    image: np.ndarray
    gaze: np.ndarray
    detections: list[Detection]
    yaw: float
    translation: float
    task_box: tuple[int, int, int, int] | None
    gaze_target: tuple[float, float]


def render_scene(rng, spec: FixtureSpec, attentive: bool, trivial: bool, daytime: bool) -> Scene:
    W, H = spec.image_width, spec.image_height
    base = float(rng.uniform(110, 140))
    yy = np.linspace(0, 1, H)[:, None]
    # brighter sky band above a darker road
    field = base + 25.0 * (0.5 - yy) + rng.normal(0, spec.background_noise, (H, W))
    img = np.repeat(field[:, :, None], 3, axis=2)
    dets: list[Detection] = []
    sx, sy = spec.gaze_width / W, spec.gaze_height / H

    if trivial:
        cx, cy = W / 2.0, H / 2.0
        yaw, translation = 0.0, 0.0
        task_box = None
        target = (cx, cy)
        sigma = spec.gaze_sigma * spec.object_max
    else:
        boxes = _place_boxes(rng, spec, 1 + spec.n_distractors)
        task_box, distractors = boxes[0], boxes[1:]
        luma = float(TASK_RGB @ LUMA)
        x, y, w, h = task_box
        img[y:y + h, x:x + w] = TASK_RGB
        dets.append(Detection(TASK_CLASS, (x, y, w, h), float(rng.uniform(0.5, 1.0))))
        for bx, by, bw, bh in distractors:
            hue = DISTRACTOR_HUES[int(rng.integers(len(DISTRACTOR_HUES)))]
            img[by:by + bh, bx:bx + bw] = _match_luma(hue, luma)
            cls = DISTRACTOR_CLASSES[int(rng.integers(len(DISTRACTOR_CLASSES)))]
            dets.append(Detection(cls, (bx, by, bw, bh), float(rng.uniform(0.5, 1.0))))
        size = math.sqrt(w * h)
        # apparent size stands in for proximity, horizontal offset for heading
        translation = 2.0 * (size - spec.object_min) / max(spec.object_max - spec.object_min, 1)
        yaw = 30.0 * ((x + w / 2.0) - W / 2.0) / (W / 2.0)
        if attentive or not distractors:
            gx, gy, gw, gh = task_box
        else:
            gx, gy, gw, gh = distractors[int(rng.integers(len(distractors)))]
        target = (gx + gw / 2.0, gy + gh / 2.0)
        sigma = spec.gaze_sigma * math.sqrt(gw * gh)

    if rng.uniform() < spec.false_detection_rate:
        fw, fh = (int(v) for v in rng.integers(spec.object_min, spec.object_max + 1, 2))
        fx = int(rng.integers(0, W - fw))
        fy = int(rng.integers(0, H - fh))
        dets.append(Detection("stop sign", (fx, fy, fw, fh), float(rng.uniform(0.05, 0.29))))

    if not daytime:
        img *= 0.3
        dets = [replace(d, confidence=d.confidence * 0.4) for d in dets]
    img = np.clip(np.round(img), 0, 255)
    gaze = gaussian_blob(spec.gaze_width, spec.gaze_height, target[0] * sx, target[1] * sy,
                         max(sigma * sx, 1.0))
    return Scene(img, gaze, dets, yaw, translation, task_box, target)


def generate_fixtures(spec: FixtureSpec, seed: int, out_dir) -> dict:
    """Write the dataset, models and config under ``out_dir``; returns a summary."""
    out = Path(out_dir)
    for sub in ("images", "gaze", "models"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n = spec.n_frames
    attentive = interleave(n, spec.attentive_fraction)
    trivial = interleave(n, spec.trivial_fraction, phase=0.37)
    night = interleave(n, spec.night_fraction, phase=0.71)
    per_run = math.ceil(n / spec.n_runs)

    records, labels, detections = [], [], {}
    for i in range(n):
        run_id = f"run{i // per_run + 1:02d}"
        rec = FrameRecord(run_id=run_id, frame_idx=i % per_run,
                          attention="attentive" if attentive[i] else "inattentive",
                          trivial=bool(trivial[i]), daytime=not night[i], split=None,
                          image_path=out / "images" / "x", gaze_path=out / "gaze" / "x",
                          detections_path=out / "detections.csv")
        fid = rec.frame_id
        rec = replace(rec, image_path=out / "images" / f"{fid}.ppm", gaze_path=out / "gaze" / f"{fid}.pgm")
        scene = render_scene(rng, spec, bool(attentive[i]), bool(trivial[i]), not night[i])
        save_image(scene.image, rec.image_path)
        save_grayscale(Heatmap(scene.gaze), rec.gaze_path)
        detections[fid] = scene.detections
        labels.append((fid, scene.yaw, scene.translation))
        records.append(rec)

    records = split_train_test(records, spec.train_ratio, seed)
    write_manifest(records, out / "manifest.csv")
    write_detections(out / "detections.csv", detections)
    with open(out / "labels.csv", "w", encoding="utf-8") as fh:
        fh.write("frame_id,yaw,translation\n")
        for fid, yaw, tr in labels:
            fh.write(f"{fid},{yaw!r},{tr!r}\n")

    models = build_fixture_models(spec, seed)
    for name, model in models.items():
        nn.save_model(model, out / "models" / f"{name}.json")

    config = default_fixture_config()
    (out / "fixture.cfg").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")

    filtered = sum(1 for r in records if not r.trivial and r.daytime and r.split == "test")
    summary = {
        "seed": seed,
        "spec": asdict(spec),
        "n_frames": n,
        "n_attentive": int(attentive.sum()),
        "n_trivial": int(trivial.sum()),
        "n_night": int(night.sum()),
        "n_train": sum(r.split == "train" for r in records),
        "n_test": sum(r.split == "test" for r in records),
        "n_filtered": filtered,
    }
    (out / "fixture_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def default_fixture_config() -> dict:
    return {
        "manifest": "manifest.csv",
        "labels": "labels.csv",
        "output_dir": "report",
        "seed": 0,
        "methods": [
            {"name": "Spectral Residual", "kind": "spectral"},
            {"name": "LRP Random", "kind": "lrp", "model": "models/random.json"},
            {"name": "LRP ImageNet", "kind": "lrp", "model": "models/pretrained.json"},
            {"name": "LRP Driving", "kind": "lrp_driving", "model": "models/pretrained.json"},
        ],
        "training": {"epochs": 20, "batch_size": 8, "learning_rate": 0.1},
        "emphasis": {"pairs": [["LRP Driving", "LRP ImageNet"], ["LRP ImageNet", "LRP Random"]]},
        "emergent": {"driving": "LRP Driving", "imagenet": "LRP ImageNet", "frames": 4},
    }
