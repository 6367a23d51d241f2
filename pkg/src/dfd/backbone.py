"""Frozen local-feature extractor and the linear feature adaptor.

The default trunk is a seed-deterministic random convolutional net:

    stem   conv3x3/2 (3->32) + relu, maxpool 3x3/2  stride 4
    level2 conv3x3/2 (32->64) + relu                stride 8
    level3 conv3x3/2 (64->128) + relu               stride 16

Level 2 and 3 maps are averaged over a local neighbourhood, level 3 is
bilinearly upsampled onto the level-2 grid and the two are concatenated,
giving a (H/8, W/8, 192) feature map. The concatenation is divided by
sqrt(192) so one position's feature vector has roughly unit length.

The neighbourhood size is stated for a 256-pixel image and shrinks with the
input (3 at 256, 1 at 64) so it spans the same fraction of the image.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter

from . import autodiff as ad
from .autodiff import weights as dfdw
from .errors import ConfigError
from .frequency import split_frequency
from .imagery import resize

TRUNK = (("conv1", 3, 32), ("conv2", 32, 64), ("conv3", 64, 128))
REFERENCE_SIZE = 256


def aggregation_size(k: int, size: int) -> int:
    """Odd neighbourhood width for an image of ``size`` pixels."""
    half = (k - 1) / 2 * size / REFERENCE_SIZE
    return 2 * int(np.floor(half + 0.5)) + 1


@dataclass(frozen=True)
class BackboneSpec:
    kind: str = "random-conv"
    seed: int = 0
    taps: tuple = (2, 3)
    aggregate: int = 3
    weights: str = ""

    def __post_init__(self):
        if not self.taps or not set(self.taps) <= {2, 3}:
            raise ConfigError(f"taps must be a nonempty subset of (2, 3), got {self.taps}")
        if self.kind == "imported" and not self.weights:
            raise ConfigError("imported backbone needs a weights path")
        if self.kind not in ("random-conv", "imported"):
            raise ConfigError(f"unknown backbone kind {self.kind!r}")

    @classmethod
    def from_config(cls, cfg) -> "BackboneSpec":
        return cls(cfg.backbone, cfg.backbone_seed, (2, 3), cfg.aggregate, cfg.backbone_weights)

    @property
    def channels(self) -> int:
        return sum(TRUNK[t - 1][2] for t in self.taps)


def random_trunk(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    out = {}
    for name, cin, cout in TRUNK:
        std = np.sqrt(2.0 / (cin * 9))
        out[name] = rng.normal(0.0, std, (cin, 3, 3, cout)).astype(np.float32)
    return out


def conv3x3(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """x: (B, H, W, Cin), w: (Cin, 3, 3, Cout); reflect padding."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="reflect")
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::stride, ::stride]
    b, h, wd = win.shape[:3]
    cols = win.reshape(b * h * wd, -1)
    return (cols @ w.reshape(-1, w.shape[-1])).reshape(b, h, wd, -1)


def maxpool3x3(x: np.ndarray, stride: int) -> np.ndarray:
    """3x3 max pooling over (B, H, W, C) with edge padding."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    return sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::stride, ::stride].max(axis=(-2, -1))


class Backbone:
    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        if spec.kind == "imported":
            if not Path(spec.weights).exists():
                raise ConfigError(f"backbone weights not found: {spec.weights}")
            self.weights = dfdw.load(spec.weights)
            for name, cin, cout in TRUNK:
                if self.weights.get(name, np.empty(0)).shape != (cin, 3, 3, cout):
                    raise ConfigError(f"imported backbone lacks {name} of shape {(cin, 3, 3, cout)}")
        else:
            self.weights = random_trunk(spec.seed)
        for arr in self.weights.values():
            arr.setflags(write=False)

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.weights):
            h.update(name.encode())
            h.update(self.weights[name].tobytes())
        return h.hexdigest()

    def levels(self, x: np.ndarray) -> dict:
        w = self.weights
        x = maxpool3x3(np.maximum(conv3x3(x, w["conv1"], 2), 0), 2)
        l2 = np.maximum(conv3x3(x, w["conv2"], 2), 0)
        l3 = np.maximum(conv3x3(l2, w["conv3"], 2), 0)
        return {2: l2, 3: l3}

    def __call__(self, img: np.ndarray) -> np.ndarray:
        """(H, W, 3) or (B, H, W, 3) standardised image(s) -> float32 features."""
        single = img.ndim == 3
        x = np.asarray(img, dtype=np.float32)
        if single:
            x = x[None]
        lv = self.levels(x)
        gh, gw = lv[2].shape[1:3]
        k = aggregation_size(self.spec.aggregate, min(x.shape[1:3]))
        maps = []
        for tap in self.spec.taps:
            m = uniform_filter(lv[tap], size=(1, k, k, 1), mode="mirror") if k > 1 else lv[tap]
            if m.shape[1:3] != (gh, gw):
                m = np.stack([resize(f, gh, gw) for f in m])
            maps.append(m)
        out = np.concatenate(maps, axis=-1)
        out = (out / np.sqrt(out.shape[-1])).astype(np.float32)
        return out[0] if single else out


@lru_cache(maxsize=8)
def get_backbone(spec: BackboneSpec) -> Backbone:
    return Backbone(spec)


def extract(img: np.ndarray, spec: BackboneSpec = BackboneSpec()) -> np.ndarray:
    return get_backbone(spec)(img)


def extract_pair(img: np.ndarray, spec: BackboneSpec = BackboneSpec()):
    low, high = split_frequency(img)
    feats = get_backbone(spec)(np.stack([low, high]))
    return feats[0], feats[1]


def extract_bands(img: np.ndarray, spec: BackboneSpec, mfic_on: bool = True) -> np.ndarray:
    """(bands, h, w, C) features: (low, high) with band split, else (raw,)."""
    if mfic_on:
        return np.stack(extract_pair(img, spec))
    return extract(img, spec)[None]


def init_adaptor(channels: int, dtype=np.float32) -> ad.Parameter:
    return ad.Parameter(np.eye(channels, dtype=dtype), name="adaptor.weight")


def adapt(p, weight):
    """Position-wise linear map q = W p (no bias, no activation)."""
    p = ad.as_tensor(p, weight)
    if p.shape[-1] != weight.shape[1]:
        raise ValueError(f"adaptor expects {weight.shape[1]} channels, got {p.shape[-1]}")
    return ad.matmul(p, ad.transpose(weight))
