"""One-level Gaussian pyramid band split plus spectral analysis helpers."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.ndimage import correlate1d

from .imagery import to_grayscale

BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class FrequencyPair(NamedTuple):
    low: np.ndarray
    high: np.ndarray


class RadialProfile(NamedTuple):
    radius: np.ndarray
    energy: np.ndarray


def _blur(img: np.ndarray, gain: float = 1.0) -> np.ndarray:
    # 'mirror' == reflect-101: keeps the zero-stuffed parity pattern intact at borders
    k = BINOMIAL * np.sqrt(gain)
    out = correlate1d(img, k, axis=0, mode="mirror")
    return correlate1d(out, k, axis=1, mode="mirror")


def pyr_down(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"image too small for pyr_down: {img.shape[:2]}")
    return _blur(img)[1::2, 1::2]


def pyr_up(img: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if target_h // 2 != h or target_w // 2 != w:
        raise ValueError(f"cannot expand {h}x{w} to {target_h}x{target_w}")
    up = np.zeros((target_h, target_w) + img.shape[2:])
    up[1::2, 1::2] = img
    return _blur(up, gain=4.0)


def split_frequency(img: np.ndarray) -> FrequencyPair:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"band split needs even dims, got {h}x{w}")
    low = pyr_up(pyr_down(img), h, w)
    return FrequencyPair(low, img - low)


def dft2(img: np.ndarray) -> np.ndarray:
    """Complex spectrum of a single-channel image (colour input uses luminance)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = to_grayscale(img)
    return np.fft.fft2(img)


def amplitude_phase(spec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # +0.0 folds a negative-zero imaginary part so the angle stays in (-pi, pi]
    return np.abs(spec), np.arctan2(spec.imag + 0.0, spec.real)


def radial_energy(spec: np.ndarray) -> RadialProfile:
    """Sum of amplitudes per integer distance from the (shifted) DC bin.

    Corner bins farther than r_max = min(H, W) // 2 are folded into the last
    bin so that the profile conserves total amplitude.
    """
    amp = np.abs(np.fft.fftshift(spec))
    h, w = amp.shape
    yy, xx = np.indices((h, w))
    r = np.rint(np.hypot(yy - h // 2, xx - w // 2)).astype(int)
    r_max = min(h, w) // 2
    r = np.minimum(r, r_max)
    energy = np.bincount(r.ravel(), weights=amp.ravel(), minlength=r_max + 1)
    return RadialProfile(np.arange(r_max + 1), energy)


def high_band_energy(profile: RadialProfile) -> float:
    r_max = profile.radius[-1]
    return float(profile.energy[profile.radius > r_max / 2].sum())


def gray_histogram(img: np.ndarray) -> np.ndarray:
    gray = to_grayscale(np.asarray(img, dtype=np.float64))
    q = np.rint(np.clip(gray, 0.0, 1.0) * 255).astype(int)
    return np.bincount(q.ravel(), minlength=256)
