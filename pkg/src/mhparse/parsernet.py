"""Toy fully convolutional learner with parsing, affinity and count heads."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .affinity import majority_vote
from .numcore import autodiff as ad
from .scene import NUM_CLASSES


@dataclass(frozen=True)
class ModelConfig:
    downscale: int = 4
    trunk_width: int = 16
    feature_channels: int = 8
    num_classes: int = NUM_CLASSES
    count_bias: float = 3.0
    background_prior: float = 2.0

    def __post_init__(self):
        if self.downscale not in (2, 4, 8):
            raise ValueError("downscale must be 2, 4 or 8")


@dataclass
class ParsingMap:
    logits: np.ndarray   # H' x W' x C

    @property
    def probabilities(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    @property
    def shape(self):
        return self.logits.shape[:2]

    def foreground_probability(self) -> np.ndarray:
        """1 - P(background) at parsing resolution."""
        return 1.0 - self.probabilities[..., 0]


def init_params(cfg: ModelConfig = ModelConfig(), seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    t, c, f = cfg.trunk_width, cfg.num_classes, cfg.feature_channels

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    return {
        "conv1_w": he((5, 5, 3, t), 5 * 5 * 3),
        "conv1_b": np.zeros(t),
        "conv2_w": he((3, 3, t, t), 9 * t),
        "conv2_b": np.zeros(t),
        "conv3_w": he((3, 3, t, t), 9 * t),
        "conv3_b": np.zeros(t),
        "seg_w": rng.normal(0.0, 0.1 / np.sqrt(t), size=(t, c)),
        "seg_b": np.concatenate(([cfg.background_prior], np.zeros(c - 1))),
        "aff_w": rng.normal(0.0, 0.1 / np.sqrt(t), size=(t, f)),
        "aff_b": np.zeros(f),
        "count_w": rng.normal(0.0, 0.01, size=(t,)),
        "count_b": np.array([cfg.count_bias]),
    }


def zero_params(cfg: ModelConfig = ModelConfig()) -> dict:
    return {k: np.zeros_like(v) for k, v in init_params(cfg).items()}


def forward_graph(p: dict, image, cfg: ModelConfig = ModelConfig()):
    """Differentiable forward pass; ``p`` maps names to autodiff variables."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got {image.shape}")
    if h % cfg.downscale or w % cfg.downscale:
        raise ValueError(f"image size {h}x{w} not divisible by {cfg.downscale}")
    x = ad.relu(ad.conv2d(image - 0.5, p["conv1_w"], p["conv1_b"], stride=2, pad=2))
    x = ad.relu(ad.conv2d(x, p["conv2_w"], p["conv2_b"], stride=cfg.downscale // 2, pad=1))
    x = ad.relu(ad.conv2d(x, p["conv3_w"], p["conv3_b"], stride=1, pad=1))
    ho, wo, t = x.shape
    flat = ad.reshape(x, (ho * wo, t))
    logits = ad.reshape(ad.matmul(flat, p["seg_w"]) + p["seg_b"], (ho, wo, -1))
    feats = ad.reshape(ad.matmul(flat, p["aff_w"]) + p["aff_b"], (ho, wo, -1))
    pooled = ad.mean(flat, axis=0)
    count = ad.matmul(pooled, p["count_w"]) + p["count_b"]
    return logits, feats, ad.reshape(count, ())


def forward(params: dict, image, cfg: ModelConfig = ModelConfig()):
    """Returns ``(ParsingMap, features, count_pred)`` as plain arrays."""
    vs = {k: ad.const(v) for k, v in params.items()}
    logits, feats, count = forward_graph(vs, image, cfg)
    return ParsingMap(logits.value), feats.value, float(count.value)


def downsample_labels(labels, factor: int) -> np.ndarray:
    """Majority vote of each ``factor x factor`` cell (background loses ties)."""
    labels = np.asarray(labels, dtype=np.int64)
    h, w = labels.shape
    ho, wo = h // factor, w // factor
    cell = (np.arange(h)[:, None] // factor) * wo + (np.arange(w)[None, :] // factor)
    return majority_vote(labels, cell, ho * wo).reshape(ho, wo)


def seg_loss_var(logits, gt) -> ad.Var:
    logits = ad.const(logits)
    c = logits.shape[-1]
    flat = ad.reshape(logits, (-1, c))
    logp = ad.log_softmax(flat, axis=1)
    return ad.scale(ad.mean(ad.pick(logp, np.asarray(gt).ravel())), -1.0)


def seg_loss(parsing: ParsingMap, gt) -> float:
    """Pixel-averaged cross entropy of the parsing map against category ids."""
    gt = np.asarray(gt)
    if gt.shape != parsing.shape:
        raise ValueError(f"label map {gt.shape} does not match parsing {parsing.shape}")
    return float(seg_loss_var(parsing.logits, gt).value)


def count_loss_var(count, p: int) -> ad.Var:
    d = ad.sub(count, float(p))
    return ad.mul(d, d)


def count_loss(count_pred: float, p: int) -> float:
    if p < 1:
        raise ValueError("person count must be >= 1")
    return float((count_pred - p) ** 2)


def predicted_count(count_pred: float) -> int:
    return max(1, int(np.floor(count_pred + 0.5)))


def upsample_bilinear(arr, out_hw) -> np.ndarray:
    """Bilinear resize with half-pixel centres; works on H x W or H x W x C."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    ho, wo = out_hw

    def axis(n_in, n_out):
        pos = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0.0, n_in - 1)
        i0 = np.floor(pos).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    y0, y1, fy = axis(h, ho)
    x0, x1, fx = axis(w, wo)
    if arr.ndim == 3:
        fy, fx = fy[:, None, None], fx[None, :, None]
    else:
        fy, fx = fy[:, None], fx[None, :]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


class SGD:
    """Momentum SGD over a name -> array dict.

    ``clip`` bounds the gradient norm, either over all tensors together
    (``per_tensor=False``) or separately for each tensor.
    """

    def __init__(self, lr: float, momentum: float = 0.9, clip: float | None = None,
                 per_tensor: bool = True):
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.per_tensor = per_tensor
        self.velocity = {}

    def _clipped(self, grads):
        if self.clip is None:
            return grads
        if self.per_tensor:
            out = {}
            for k, g in grads.items():
                norm = float(np.sqrt((g * g).sum()))
                out[k] = g * (self.clip / norm) if norm > self.clip else g
            return out
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > self.clip:
            return {k: g * (self.clip / norm) for k, g in grads.items()}
        return grads

    def step(self, params: dict, grads: dict) -> dict:
        grads = self._clipped(grads)
        out = {}
        for k, v in params.items():
            g = grads.get(k)
            if g is None:
                out[k] = v
                continue
            vel = self.momentum * self.velocity.get(k, 0.0) + g
            self.velocity[k] = vel
            out[k] = v - self.lr * vel
        return out


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    doc = {"format": "mhparse-checkpoint", "meta": meta or {},
           "tensors": {k: {"shape": list(np.shape(v)), "values": np.asarray(v, dtype=np.float64).ravel().tolist()}
                       for k, v in tensors.items()}}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "mhparse-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    tensors = {k: np.array(t["values"], dtype=np.float64).reshape(t["shape"]) for k, t in doc["tensors"].items()}
    return tensors, doc.get("meta", {})
