"""Pseudo-anomaly generation.

Image level: a thresholded Perlin field, restricted to the foreground,
selects where a texture is alpha-blended into a normal image. Feature
level: i.i.d. Gaussian noise added to adapted features.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import rotate

from .config import TrainConfig
from .errors import ConfigError
from .imagery import foreground_mask, load_image, resize, save_image, save_mask


@dataclass
class AnomalySample:
    image: np.ndarray
    mask: np.ndarray
    beta: float
    is_anomalous: bool
    source: np.ndarray  # the (rotated) normal image before blending


@dataclass
class NoiseSpec:
    mean: float = 0.0
    std: float = 0.015
    seed: int = 0

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("noise std must be > 0")


def stream(seed, *key) -> np.random.Generator:
    """Independent generator for ``key`` under a master seed (order-free)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def perlin(h: int, w: int, period: int, seed) -> np.ndarray:
    """Gradient-lattice noise with ``period`` cells per axis, values in [-1, 1]."""
    if period < 1:
        raise ValueError("Perlin period must be >= 1")
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2 * np.pi, (period + 1, period + 1))
    gy, gx = np.sin(angles), np.cos(angles)

    y = np.arange(h) * (period / h)
    x = np.arange(w) * (period / w)
    iy = np.minimum(y.astype(int), period - 1)
    ix = np.minimum(x.astype(int), period - 1)
    fy = (y - iy)[:, None]
    fx = (x - ix)[None, :]
    Y, X = iy[:, None], ix[None, :]

    def corner(dy, dx):
        return gy[Y + dy, X + dx] * (fy - dy) + gx[Y + dy, X + dx] * (fx - dx)

    u, v = _fade(fx), _fade(fy)
    top = corner(0, 0) + u * (corner(0, 1) - corner(0, 0))
    bot = corner(1, 0) + u * (corner(1, 1) - corner(1, 0))
    return top + v * (bot - top)


def perlin_mask(p: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (p > threshold).astype(np.uint8)


def compose_mask(mf: np.ndarray, mp: np.ndarray) -> np.ndarray:
    if mf.shape != mp.shape:
        raise ValueError(f"mask shapes differ: {mf.shape} vs {mp.shape}")
    return (np.asarray(mf) & np.asarray(mp)).astype(np.uint8)


def blend_anomaly(img: np.ndarray, tex: np.ndarray, m: np.ndarray, beta: float) -> AnomalySample:
    if img.shape != tex.shape or img.shape[:2] != m.shape:
        raise ValueError(f"shape mismatch: image {img.shape}, texture {tex.shape}, mask {m.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    inside = np.asarray(m, bool)[..., None]
    out = np.where(inside, (1 - beta) * img + beta * tex, img)
    return AnomalySample(out, np.asarray(m, np.uint8), float(beta), bool(inside.any()), img)


def procedural_texture(h: int, w: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    chans = []
    for _ in range(3):
        field = np.zeros((h, w))
        base = int(rng.choice([2, 4, 8]))
        for octave in range(4):
            field += perlin(h, w, base * 2 ** octave, rng.integers(2 ** 63)) / 2 ** octave
        field -= field.min()
        field /= max(field.max(), 1e-12)
        lo, hi = np.sort(rng.uniform(0, 1, 2))
        chans.append(lo + (hi - lo) * field)
    return np.stack(chans, axis=-1)


def list_textures(folder) -> list:
    files = sorted(Path(folder).glob("*.png")) if folder else []
    if not files:
        raise ConfigError(f"texture folder {folder!r} has no PNG files")
    return files


def texture_source(mode: str, seed, h: int = 256, w: int = 256, folder=None) -> np.ndarray:
    if mode == "procedural":
        return procedural_texture(h, w, seed)
    if mode == "folder":
        files = list_textures(folder)
        pick = files[int(np.random.default_rng(seed).integers(len(files)))]
        return resize(load_image(pick), h, w)
    raise ConfigError(f"unknown texture mode {mode!r}")


REFERENCE_SIZE = 256


def scaled_period(period: int, h: int, w: int) -> int:
    """Lattice cells per axis for an image of h x w; periods are stated for a
    256-pixel image so blob sizes stay fixed relative to the image."""
    return max(1, int(period * min(h, w) // REFERENCE_SIZE))


def _defect_mask(src, cfg, rng, attempts=10):
    h, w = src.shape[:2]
    mf = foreground_mask(src)
    for _ in range(attempts):
        period = scaled_period(int(rng.choice(cfg.perlin_periods)), h, w)
        p = perlin(h, w, period, rng.integers(2 ** 63))
        m = compose_mask(mf, perlin_mask(p, cfg.perlin_threshold))
        if m.any():
            return m
    # keep the strongest noise response inside the foreground
    p = np.where(mf > 0, p, -np.inf)
    return (p >= p.max()).astype(np.uint8)


def make_sample(img: np.ndarray, cfg: TrainConfig, seed, index: int, rotate_on: bool = True) -> AnomalySample:
    rng = stream(seed, index)
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    src = img
    if rotate_on and angle != 0.0:
        src = np.clip(rotate(img, angle, axes=(1, 0), reshape=False, order=1, mode="reflect"), 0, 1)
    if rng.random() >= cfg.anomaly_prob:
        return AnomalySample(src, np.zeros(src.shape[:2], np.uint8), 0.0, False, src)
    m = _defect_mask(src, cfg, rng)
    tex = texture_source(cfg.texture_mode, rng.integers(2 ** 63), *src.shape[:2], folder=cfg.texture_dir)
    beta = rng.uniform(cfg.beta_min, cfg.beta_max)
    return blend_anomaly(src, tex, m, beta)


def augment(img: np.ndarray, cfg: TrainConfig, seed) -> list:
    """N rotated copies of ``img``, each blended with a defect with
    probability ``cfg.anomaly_prob``. With augmentation off, a single
    unrotated sample is produced."""
    if not cfg.augment_on:
        return [make_sample(img, cfg, seed, 0, rotate_on=False)]
    return [make_sample(img, cfg, seed, k) for k in range(cfg.N)]


def perturb_features(q, spec: NoiseSpec):
    """``q + eps`` with eps ~ N(mean, std^2) per element; ``q`` may be a
    numpy array or a Tensor (gradient passes through unchanged)."""
    eps = np.random.default_rng(spec.seed).normal(spec.mean, spec.std, q.shape)
    return q + eps.astype(q.dtype)


def export_samples(samples, outdir) -> Path:
    """Write image/mask PNG pairs and a manifest (path,mask,is_anomalous,beta)."""
    outdir = Path(outdir)
    lines = []
    for k, s in enumerate(samples):
        img_path = outdir / "images" / f"{k:05d}.png"
        mask_path = outdir / "masks" / f"{k:05d}.png"
        save_image(img_path, s.image)
        save_mask(mask_path, s.mask)
        lines.append(f"{img_path.relative_to(outdir)},{mask_path.relative_to(outdir)},"
                     f"{int(s.is_anomalous)},{s.beta:.6f}\n")
    manifest = outdir / "manifest.txt"
    manifest.write_text("".join(lines))
    return manifest
