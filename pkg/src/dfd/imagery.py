"""Raster I/O and basic image operations.

Images are float arrays of shape (H, W, 3) with values in [0, 1]; grayscale
images and masks are (H, W). Masks use uint8 {0, 1}.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError
from skimage.filters import threshold_otsu

from .errors import DecodeError

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
LUMA = np.array([0.299, 0.587, 0.114])

_FORMATS = {"PNG", "PPM"}  # PIL reports PGM payloads as PPM


def load_image(path, gray: bool = False) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with PILImage.open(path) as im:
            if im.format not in _FORMATS:
                raise DecodeError(f"{path}: unsupported format {im.format}")
            im.load()
            im = im.convert("L" if gray else "RGB")
            arr = np.asarray(im, dtype=np.float64)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    return arr / 255.0


def load_mask(path) -> np.ndarray:
    return (load_image(path, gray=True) > 0.5).astype(np.uint8)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(img)).save(path)


def save_mask(path, mask: np.ndarray) -> None:
    """Write a mask as 8-bit {0, 255}; PGM when the suffix is .pgm."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres, edge clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resample of an (H, W) or (H, W, C) array to (h, w)."""
    if h < 1 or w < 1:
        raise ValueError(f"degenerate target size {h}x{w}")
    img = np.asarray(img)
    if img.shape[:2] == (h, w):
        return img.copy()
    ry = _interp_matrix(img.shape[0], h)
    rx = _interp_matrix(img.shape[1], w)
    out = np.tensordot(ry, img, axes=(1, 0))
    out = np.moveaxis(np.tensordot(rx, out, axes=(1, 1)), 0, 1)
    return out.astype(img.dtype if img.dtype.kind == "f" else np.float64)


def standardize(img: np.ndarray) -> np.ndarray:
    return (img - IMAGENET_MEAN) / IMAGENET_STD


def destandardize(img: np.ndarray) -> np.ndarray:
    return img * IMAGENET_STD + IMAGENET_MEAN


def to_grayscale(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        return img
    if img.shape[-1] != 3:
        raise ValueError(f"expected 3 channels, got {img.shape[-1]}")
    return img @ LUMA


def _border(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a[0], a[-1], a[1:-1, 0], a[1:-1, -1]])


def foreground_mask(img: np.ndarray) -> np.ndarray:
    """Otsu-binarize the luminance; the class that is the minority on the
    image border is the foreground. Constant images are all foreground."""
    gray = to_grayscale(img)
    if np.ptp(gray) < 1e-12:
        return np.ones(gray.shape, np.uint8)
    above = gray > threshold_otsu(gray)
    if _border(above).mean() > 0.5:
        above = ~above
    return above.astype(np.uint8)
