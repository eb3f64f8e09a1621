"""Layer-wise relevance propagation over a :class:`~salience_align.nn.ModelSpec`.

Linear layers (dense, conv2d, global average pooling) redistribute relevance
with the z-rule or its epsilon-stabilized variant::

    R_i = sum_j  a_i w_ij / (z_j + eps * sign(z_j))  * R_j,   z_j = sum_i a_i w_ij + b_j

ReLU, dropout and flatten pass relevance through unchanged (reshaped where
needed); max pooling routes each window's relevance to its winning input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .heatmap import Heatmap, normalize_max
from .nn import ModelSpec, conv_forward, forward, layer_output_shape, pad_input, pool_windows

DEFAULT_EPSILON = 1e-7


class LRPError(ValueError):
    pass


class NonFiniteRelevanceError(LRPError):
    """Relevance blew up: a zero (or near-zero) denominator met non-zero relevance."""


@dataclass(frozen=True)
class Rule:
    name: str = "epsilon"
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.name not in ("z", "epsilon"):
            raise LRPError(f"unknown LRP rule {self.name!r}")
        if self.epsilon < 0:
            raise LRPError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.name == "z" and self.epsilon != 0:
            object.__setattr__(self, "epsilon", 0.0)


Z_RULE = Rule("z", 0.0)
EPSILON_RULE = Rule("epsilon", DEFAULT_EPSILON)


def as_rule(rule) -> Rule:
    if isinstance(rule, Rule):
        return rule
    if rule in (None, "epsilon"):
        return EPSILON_RULE
    if rule == "z":
        return Z_RULE
    raise LRPError(f"unknown LRP rule {rule!r}")


@dataclass(frozen=True, eq=False)
class RelevanceMap:
    per_layer: list[np.ndarray]
    input_heatmap: Heatmap
    rule: Rule
    output_mask: np.ndarray

    @property
    def input_relevance(self) -> np.ndarray:
        return self.per_layer[0]

    @property
    def seed(self) -> np.ndarray:
        return self.per_layer[-1]


def _ratio(R: np.ndarray, z: np.ndarray, eps: float) -> np.ndarray:
    den = z + eps * np.where(z >= 0, 1.0, -1.0)
    zero = den == 0
    if np.any(zero & (R != 0)):
        raise NonFiniteRelevanceError("zero denominator with non-zero relevance; use epsilon > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(zero, 0.0, R / np.where(zero, 1.0, den))
    if not np.all(np.isfinite(s)):
        raise NonFiniteRelevanceError("non-finite relevance; epsilon too small for this input")
    return s


def _conv_transpose(s: np.ndarray, layer, in_shape) -> np.ndarray:
    """Adjoint of the bias-free convolution, mapping output ratios to inputs."""
    kh, kw = layer.kernel
    st = layer.stride
    probe = np.zeros(in_shape)
    xp, (top, left) = pad_input(probe, layer)
    g = np.tensordot(s, layer.weight, axes=([2], [3]))  # (Ho, Wo, kh, kw, cin)
    ho, wo = s.shape[:2]
    acc = np.zeros_like(xp)
    for di in range(kh):
        for dj in range(kw):
            acc[di:di + st * (ho - 1) + 1:st, dj:dj + st * (wo - 1) + 1:st] += g[:, :, di, dj]
    return acc[top:top + in_shape[0], left:left + in_shape[1]]


def _backward(layer, a: np.ndarray, R: np.ndarray, eps: float) -> np.ndarray:
    kind = layer.kind
    if kind in ("relu", "dropout"):
        return R
    if kind == "flatten":
        return R.reshape(a.shape)
    if kind == "dense":
        z = a @ layer.weight
        if layer.use_bias:
            z = z + layer.bias
        return a * (layer.weight @ _ratio(R, z, eps))
    if kind == "conv2d":
        z = conv_forward(a, layer)
        return a * _conv_transpose(_ratio(R, z, eps), layer, a.shape)
    if kind == "global_average_pool":
        # the pool is a linear layer with weights 1/(h*w)
        hw = a.shape[0] * a.shape[1]
        s = _ratio(R, a.sum(axis=(0, 1)) / hw, eps)
        return a * (s / hw)
    if kind == "maxpool2d":
        win = pool_windows(a, layer)
        winner = win.argmax(axis=-1)  # first index on ties
        k, st = layer.pool_size, layer.stride
        ho, wo, c = layer_output_shape(layer, a.shape)
        oi, oj, ch = np.meshgrid(np.arange(ho), np.arange(wo), np.arange(c), indexing="ij")
        rows = oi * st + winner // k
        cols = oj * st + winner % k
        out = np.zeros_like(a)
        np.add.at(out, (rows, cols, ch), R)
        return out
    raise LRPError(f"no relevance rule for layer kind {kind!r}")


def input_heatmap(relevance: np.ndarray) -> Heatmap:
    """Collapse channels, drop negative relevance and scale to [0, 255]."""
    field = relevance.sum(axis=-1) if relevance.ndim == 3 else relevance
    return normalize_max(Heatmap(np.maximum(field, 0.0)))


def lrp(model: ModelSpec, x: np.ndarray, output_mask=None, rule=EPSILON_RULE) -> RelevanceMap:
    """Propagate ``output_mask * output`` back to the input.

    ``output_mask`` defaults to all ones over the model outputs.
    """
    rule = as_rule(rule)
    acts = forward(model, x)
    out = acts[-1]
    mask = np.ones_like(out) if output_mask is None else np.asarray(output_mask, dtype=np.float64)
    if mask.shape != out.shape:
        raise LRPError(f"output mask has shape {mask.shape}, model output is {out.shape}")
    R = mask * out
    per_layer = [R]
    for i in range(len(model.layers) - 1, -1, -1):
        R = _backward(model.layers[i], acts[i], R, rule.epsilon)
        per_layer.append(R)
    per_layer.reverse()
    if not np.all(np.isfinite(per_layer[0])):
        raise NonFiniteRelevanceError("non-finite input relevance")
    return RelevanceMap(per_layer, input_heatmap(per_layer[0]), rule, mask)


def heatmap_for_regimes(variants: Mapping[str, ModelSpec], x: np.ndarray, output_mask=None,
                        rule=EPSILON_RULE) -> dict[str, Heatmap]:
    """One input heatmap per named model variant, in the variants' order."""
    shapes = {m.input_shape for m in variants.values()}
    if len(shapes) > 1:
        raise LRPError(f"variants disagree on input shape: {sorted(shapes)}")
    return {name: lrp(model, x, output_mask, rule).input_heatmap for name, model in variants.items()}
