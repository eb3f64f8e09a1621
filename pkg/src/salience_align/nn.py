"""Portable feed-forward CNN: manifest + weight blob, numpy forward pass, head training.

Tensors are ``(height, width, channels)`` float64 arrays for spatial layers
and 1-D arrays after a flatten or global pooling step.  The on-disk model is a
JSON manifest listing layers in order, next to a raw little-endian float32
blob holding every layer's parameters back to back (conv kernels in
``(kh, kw, in_c, out_c)`` order, dense kernels in ``(in, out)`` order, each
followed by its bias when the layer has one).
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

LAYER_KINDS = ("conv2d", "relu", "maxpool2d", "global_average_pool", "dropout", "dense", "flatten")


class ModelError(ValueError):
    """Invalid model manifest, weights or layer configuration."""


class ShapeChainError(ModelError):
    pass


class WeightBlobError(ModelError):
    pass


class UnknownLayerError(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    kernel: tuple[int, int] | None = None
    filters: int | None = None
    units: int | None = None
    stride: int = 1
    padding: str = "same"
    pool_size: int = 2
    rate: float = 0.0
    use_bias: bool = True
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise UnknownLayerError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ModelError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.kind == "conv2d" and self.padding not in ("same", "valid"):
            raise ModelError(f"unknown padding {self.padding!r}")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv2d", "dense")


def conv2d(filters, kernel=(3, 3), stride=1, padding="same", use_bias=True, weight=None, bias=None):
    return LayerSpec("conv2d", kernel=tuple(kernel), filters=filters, stride=stride,
                     padding=padding, use_bias=use_bias, weight=weight, bias=bias)


def dense(units, use_bias=True, weight=None, bias=None):
    return LayerSpec("dense", units=units, use_bias=use_bias, weight=weight, bias=bias)


def relu():
    return LayerSpec("relu")


def maxpool2d(pool_size=2, stride=None):
    return LayerSpec("maxpool2d", pool_size=pool_size, stride=stride or pool_size)


def global_average_pool():
    return LayerSpec("global_average_pool")


def dropout(rate):
    return LayerSpec("dropout", rate=rate)


def flatten():
    return LayerSpec("flatten")


def _same_padding(n: int, k: int, s: int) -> tuple[int, int, int]:
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def layer_output_shape(layer: LayerSpec, shape: tuple) -> tuple:
    """Shape after ``layer`` given its input shape; raises ShapeChainError."""
    kind = layer.kind
    if kind in ("relu", "dropout"):
        return shape
    if kind == "dense":
        if len(shape) != 1:
            raise ShapeChainError(f"shape chain: dense layer needs a vector input, got {shape}")
        return (layer.units,)
    if len(shape) != 3:
        raise ShapeChainError(f"shape chain: {kind} needs a spatial (h, w, c) input, got {shape}")
    h, w, c = shape
    if kind == "flatten":
        return (h * w * c,)
    if kind == "global_average_pool":
        return (c,)
    if kind == "maxpool2d":
        k, s = layer.pool_size, layer.stride
        if h < k or w < k:
            raise ShapeChainError(f"shape chain: {k}x{k} pool does not fit {h}x{w}")
        return ((h - k) // s + 1, (w - k) // s + 1, c)
    kh, kw = layer.kernel
    s = layer.stride
    if layer.padding == "same":
        return (-(-h // s), -(-w // s), layer.filters)
    if h < kh or w < kw:
        raise ShapeChainError(f"shape chain: {kh}x{kw} kernel does not fit {h}x{w}")
    return ((h - kh) // s + 1, (w - kw) // s + 1, layer.filters)


def param_shapes(layer: LayerSpec, in_shape: tuple) -> list[tuple[str, tuple]]:
    if layer.kind == "conv2d":
        kh, kw = layer.kernel
        shapes = [("weight", (kh, kw, in_shape[-1], layer.filters))]
        if layer.use_bias:
            shapes.append(("bias", (layer.filters,)))
        return shapes
    if layer.kind == "dense":
        shapes = [("weight", (in_shape[0], layer.units))]
        if layer.use_bias:
            shapes.append(("bias", (layer.units,)))
        return shapes
    return []


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    preprocess_scale: np.ndarray | None = None
    preprocess_offset: np.ndarray | None = None
    shapes: tuple[tuple, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "shapes", self._validate())

    def _validate(self):
        if len(self.input_shape) != 3 or min(self.input_shape) <= 0:
            raise ShapeChainError(f"input shape must be positive (h, w, c), got {self.input_shape}")
        shape = self.input_shape
        shapes = [shape]
        for i, layer in enumerate(self.layers):
            try:
                out = layer_output_shape(layer, shape)
            except ShapeChainError as exc:
                raise ShapeChainError(f"layer {i} ({layer.kind}): {exc}") from None
            for pname, pshape in param_shapes(layer, shape):
                arr = getattr(layer, pname)
                if arr is not None and tuple(arr.shape) != pshape:
                    raise ShapeChainError(
                        f"layer {i} ({layer.kind}): {pname} shape {arr.shape} != expected {pshape}")
            shape = out
            shapes.append(shape)
        c = self.input_shape[2]
        for name in ("preprocess_scale", "preprocess_offset"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if v.shape != (c,):
                    raise ModelError(f"{name} needs {c} entries, got {v.shape}")
                object.__setattr__(self, name, v)
        return tuple(shapes)

    @property
    def output_shape(self) -> tuple:
        return self.shapes[-1]

    def layer_params(self, i: int) -> int:
        return sum(int(np.prod(s)) for _, s in param_shapes(self.layers[i], self.shapes[i]))

    @property
    def n_params(self) -> int:
        return sum(self.layer_params(i) for i in range(len(self.layers)))

    def summary(self) -> list[tuple[str, tuple, int]]:
        """``(kind, output shape, parameter count)`` per layer, input first."""
        rows = [("input", self.input_shape, 0)]
        for i, layer in enumerate(self.layers):
            rows.append((layer.kind, self.shapes[i + 1], self.layer_params(i)))
        return rows

    def with_layer(self, index: int, layer: LayerSpec) -> "ModelSpec":
        layers = list(self.layers)
        layers[index] = layer
        return replace(self, layers=tuple(layers))


def _check_weights_present(model: ModelSpec):
    for i, layer in enumerate(model.layers):
        if layer.has_params and (layer.weight is None or (layer.use_bias and layer.bias is None)):
            raise ModelError(f"layer {i} ({layer.kind}) has no weights loaded")


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_glorot(model: ModelSpec, seed: int) -> ModelSpec:
    """Glorot-uniform kernels and zero biases for every parameterized layer."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, layer in enumerate(model.layers):
        if not layer.has_params:
            layers.append(layer)
            continue
        (_, wshape), *rest = param_shapes(layer, model.shapes[i])
        if layer.kind == "conv2d":
            kh, kw, cin, cout = wshape
            fan_in, fan_out = kh * kw * cin, kh * kw * cout
        else:
            fan_in, fan_out = wshape
        r = glorot_limit(fan_in, fan_out)
        weight = rng.uniform(-r, r, size=wshape)
        bias = np.zeros(rest[0][1]) if rest else None
        layers.append(replace(layer, weight=weight, bias=bias))
    return replace(model, layers=tuple(layers))


# --------------------------------------------------------------------------
# forward pass
# --------------------------------------------------------------------------

def pad_input(x: np.ndarray, layer: LayerSpec) -> tuple[np.ndarray, tuple[int, int]]:
    """Zero-pad for a conv layer; returns the padded tensor and (top, left)."""
    if layer.padding == "valid":
        return x, (0, 0)
    kh, kw = layer.kernel
    _, top, bottom = _same_padding(x.shape[0], kh, layer.stride)
    _, left, right = _same_padding(x.shape[1], kw, layer.stride)
    if top == bottom == left == right == 0:
        return x, (0, 0)
    return np.pad(x, ((top, bottom), (left, right), (0, 0))), (top, left)


def conv_patches(xp: np.ndarray, layer: LayerSpec, out_hw: tuple[int, int]) -> np.ndarray:
    """Im2col view: ``(Ho, Wo, kh, kw, c)`` windows of the padded input."""
    kh, kw = layer.kernel
    s = layer.stride
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))  # (H', W', c, kh, kw)
    win = win[::s, ::s][: out_hw[0], : out_hw[1]]
    return win.transpose(0, 1, 3, 4, 2)


def conv_forward(x: np.ndarray, layer: LayerSpec, bias: bool = True) -> np.ndarray:
    xp, _ = pad_input(x, layer)
    out_h, out_w, _ = layer_output_shape(layer, x.shape)
    cols = conv_patches(xp, layer, (out_h, out_w))
    z = np.tensordot(cols, layer.weight, axes=([2, 3, 4], [0, 1, 2]))
    if bias and layer.use_bias:
        z = z + layer.bias
    return z


def pool_windows(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """``(Ho, Wo, c, k*k)`` windows for max pooling, scan order row-major."""
    k, s = layer.pool_size, layer.stride
    out_h, out_w, c = layer_output_shape(layer, x.shape)
    win = sliding_window_view(x, (k, k), axis=(0, 1))[::s, ::s][:out_h, :out_w]
    return win.reshape(out_h, out_w, c, k * k)


def apply_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    kind = layer.kind
    if kind == "conv2d":
        return conv_forward(x, layer)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "maxpool2d":
        return pool_windows(x, layer).max(axis=-1)
    if kind == "global_average_pool":
        return x.mean(axis=(0, 1))
    if kind == "dropout":
        return x
    if kind == "flatten":
        return x.reshape(-1)
    z = x @ layer.weight
    return z + layer.bias if layer.use_bias else z


def preprocess(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if model.preprocess_scale is not None:
        x = x * model.preprocess_scale
    if model.preprocess_offset is not None:
        x = x + model.preprocess_offset
    return x


def forward(model: ModelSpec, x: np.ndarray) -> list[np.ndarray]:
    """Run inference; returns ``[input, out_1, ..., out_L]``.

    The first entry is the input after the manifest's per-channel affine
    preprocessing.  Dropout is the identity.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ShapeChainError(f"input shape {x.shape} does not match model input {model.input_shape}")
    _check_weights_present(model)
    acts = [preprocess(model, x)]
    for i, layer in enumerate(model.layers):
        out = apply_layer(layer, acts[-1])
        if out.shape != model.shapes[i + 1]:
            raise ShapeChainError(f"layer {i} ({layer.kind}) produced {out.shape}, expected {model.shapes[i + 1]}")
        acts.append(out)
    return acts


def predict(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    return forward(model, x)[-1]


def head_index(model: ModelSpec) -> int:
    """Index of the final dense layer (the trainable head)."""
    for i in range(len(model.layers) - 1, -1, -1):
        if model.layers[i].kind == "dense":
            return i
    raise ModelError(f"model {model.name!r} has no dense layer")


def head_features(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Activation fed into the final dense layer."""
    return forward(model, x)[head_index(model)]


def with_head(model: ModelSpec, weight: np.ndarray, bias: np.ndarray, name: str | None = None) -> ModelSpec:
    idx = head_index(model)
    head = replace(model.layers[idx], weight=np.asarray(weight, float), bias=np.asarray(bias, float), use_bias=True)
    out = model.with_layer(idx, head)
    return replace(out, name=name) if name else out


# --------------------------------------------------------------------------
# head training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DriveLabel:
    yaw: float
    translation: float

    def __post_init__(self):
        for name in ("yaw", "translation"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.translation])


def rescale_unit(values) -> np.ndarray:
    """Min-max rescale a column (or each column) to [0, 1]; constant columns map to 0."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(axis=0), v.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((v - lo) / span, 0.0, 1.0)


def mse_loss_and_grad(weight, bias, features, targets):
    """Mean squared error of the affine head and its gradients."""
    resid = features @ weight + bias - targets
    n = resid.size
    loss = float(np.sum(resid * resid) / n)
    g = 2.0 * resid / n
    return loss, features.T @ g, g.sum(axis=0)


@dataclass
class HeadTrainingResult:
    weight: np.ndarray
    bias: np.ndarray
    loss_trace: list[float]


def train_head(features, targets, epochs: int = 5, batch_size: int | None = 8,
               learning_rate: float = 1e-3, seed: int = 0, init=None) -> HeadTrainingResult:
    """Minibatch gradient descent on MSE for a single dense layer.

    ``init`` is an optional ``(weight, bias)`` pair; by default the kernel is
    Glorot-uniform from ``seed`` and the bias zero.  ``batch_size=None`` (or
    any size >= N) trains full-batch.  The loss trace holds the full-data MSE
    after each epoch.
    """
    X = np.asarray(features, dtype=np.float64)
    if len(targets) and isinstance(targets[0], DriveLabel):
        targets = [t.as_array() for t in targets]
    Y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("train_head needs a non-empty (N, d) feature matrix")
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {Y.shape[0]} targets")
    if epochs < 1 or learning_rate <= 0:
        raise ValueError("epochs must be >= 1 and learning_rate > 0")
    n, d = X.shape
    o = Y.shape[1]
    rng = np.random.default_rng(seed)
    if init is None:
        r = glorot_limit(d, o)
        W = rng.uniform(-r, r, size=(d, o))
        b = np.zeros(o)
    else:
        W = np.array(init[0], dtype=np.float64).reshape(d, o)
        b = np.array(init[1], dtype=np.float64).reshape(o)
    bs = n if batch_size is None or batch_size >= n else int(batch_size)
    trace = []
    for _ in range(epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, gW, gb = mse_loss_and_grad(W, b, X[idx], Y[idx])
            W -= learning_rate * gW
            b -= learning_rate * gb
        trace.append(mse_loss_and_grad(W, b, X, Y)[0])
    log.debug("train_head: %d samples, final loss %.6g", n, trace[-1])
    return HeadTrainingResult(W, b, trace)


# --------------------------------------------------------------------------
# manifest + blob I/O
# --------------------------------------------------------------------------

def _layer_from_dict(d: dict, i: int) -> LayerSpec:
    kind = d.get("kind")
    if kind not in LAYER_KINDS:
        raise UnknownLayerError(f"layer {i}: unknown layer kind {kind!r}")
    if kind == "conv2d":
        return conv2d(int(d["filters"]), tuple(d.get("kernel", (3, 3))), int(d.get("stride", 1)),
                      d.get("padding", "same"), bool(d.get("use_bias", True)))
    if kind == "dense":
        return dense(int(d["units"]), bool(d.get("use_bias", True)))
    if kind == "maxpool2d":
        return maxpool2d(int(d.get("size", 2)), int(d.get("stride", d.get("size", 2))))
    if kind == "dropout":
        return dropout(float(d.get("rate", 0.0)))
    return LayerSpec(kind)


def _layer_to_dict(layer: LayerSpec, out_shape, n_params) -> dict:
    d = {"kind": layer.kind}
    if layer.kind == "conv2d":
        d.update(filters=layer.filters, kernel=list(layer.kernel), stride=layer.stride,
                 padding=layer.padding, use_bias=layer.use_bias)
    elif layer.kind == "dense":
        d.update(units=layer.units, use_bias=layer.use_bias)
    elif layer.kind == "maxpool2d":
        d.update(size=layer.pool_size, stride=layer.stride)
    elif layer.kind == "dropout":
        d.update(rate=layer.rate)
    d.update(output_shape=list(out_shape), params=n_params)
    return d


def blob_path_for(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def load_model(path) -> ModelSpec:
    """Load a JSON manifest and its float32 weight blob."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: invalid manifest JSON: {exc}") from None
    try:
        layers = [_layer_from_dict(d, i) for i, d in enumerate(meta["layers"])]
        pre = meta.get("preprocess") or {}
        skeleton = ModelSpec(meta.get("name", path.stem), tuple(meta["input_shape"]), layers,
                             pre.get("scale"), pre.get("offset"))
    except KeyError as exc:
        raise ModelError(f"{path}: manifest missing key {exc}") from None
    for i, d in enumerate(meta["layers"]):
        if "output_shape" in d and tuple(d["output_shape"]) != skeleton.shapes[i + 1]:
            raise ShapeChainError(
                f"shape chain: layer {i} declares output {tuple(d['output_shape'])}, "
                f"computed {skeleton.shapes[i + 1]}")
        if "params" in d and int(d["params"]) != skeleton.layer_params(i):
            raise ModelError(f"layer {i} declares {d['params']} params, computed {skeleton.layer_params(i)}")

    blob = path.parent / meta["weights"] if "weights" in meta else blob_path_for(path)
    flat = np.fromfile(blob, dtype="<f4")
    if flat.size != skeleton.n_params:
        raise WeightBlobError(
            f"weight blob length mismatch: {blob} holds {flat.size} floats, model declares {skeleton.n_params}")
    layers, pos = [], 0
    for i, layer in enumerate(skeleton.layers):
        arrays = {}
        for pname, pshape in param_shapes(layer, skeleton.shapes[i]):
            n = int(np.prod(pshape))
            arrays[pname] = flat[pos:pos + n].astype(np.float64).reshape(pshape)
            pos += n
        layers.append(replace(layer, **arrays) if arrays else layer)
    return replace(skeleton, layers=tuple(layers))


def save_model(model: ModelSpec, path) -> None:
    """Write ``model`` as a manifest at ``path`` plus ``<stem>.bin``."""
    _check_weights_present(model)
    path = Path(path)
    blob = blob_path_for(path)
    meta = {
        "name": model.name,
        "input_shape": list(model.input_shape),
        "weights": blob.name,
        "layers": [_layer_to_dict(layer, model.shapes[i + 1], model.layer_params(i))
                   for i, layer in enumerate(model.layers)],
    }
    if model.preprocess_scale is not None or model.preprocess_offset is not None:
        c = model.input_shape[2]
        meta["preprocess"] = {
            "scale": (model.preprocess_scale if model.preprocess_scale is not None else np.ones(c)).tolist(),
            "offset": (model.preprocess_offset if model.preprocess_offset is not None else np.zeros(c)).tolist(),
        }
    parts = []
    for i, layer in enumerate(model.layers):
        for pname, _ in param_shapes(layer, model.shapes[i]):
            parts.append(np.asarray(getattr(layer, pname), dtype="<f4").ravel())
    data = np.concatenate(parts) if parts else np.zeros(0, dtype="<f4")
    tmp = f"{os.fspath(blob)}.tmp"
    data.tofile(tmp)
    os.replace(tmp, blob)
    path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
