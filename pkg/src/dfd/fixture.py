"""Synthetic-texture fixture dataset in MVTec AD directory layout.

Five categories of procedural normals. Test defects are drawn from shapes
that the training-time Perlin blending never produces (line scratches,
elliptic spots, soft stains), so the fixture does not reward memorising
the pseudo-anomaly generator. Defect paint is grainy, which puts part of
each defect's energy at high spatial frequencies.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imagery import foreground_mask, save_image, save_mask
from .synth import perlin, stream

CATEGORIES = ("stripes", "checker", "marble", "dots", "disc")
DEFECTS = ("scratch", "spot", "smudge")


@dataclass
class FixtureItem:
    image: np.ndarray
    mask: np.ndarray
    label: int
    defect: str


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy, xx


def _colorize(field, c0, c1):
    return c0 + (c1 - c0) * field[..., None]


def normal_image(category: str, rng: np.random.Generator, size: int = 64) -> np.ndarray:
    yy, xx = _grid(size)
    if category == "stripes":
        ang = np.deg2rad(30 + rng.normal(0, 2))
        t = xx * np.cos(ang) + yy * np.sin(ang)
        f = 0.5 + 0.5 * np.sin(2 * np.pi * t / 5.3 + rng.uniform(0, 2 * np.pi))
        img = _colorize(f, np.array([0.2, 0.3, 0.5]), np.array([0.7, 0.75, 0.8]))
    elif category == "checker":
        oy, ox = rng.uniform(0, 12, 2)
        f = (np.floor((yy + oy) / 5.7) + np.floor((xx + ox) / 5.7)) % 2
        img = _colorize(gaussian_filter(f, 0.7), np.array([0.35, 0.3, 0.25]), np.array([0.75, 0.7, 0.6]))
    elif category == "marble":
        p = sum(perlin(size, size, 4 * 2 ** k, rng.integers(2 ** 63)) / 2 ** k for k in range(3))
        f = 0.5 + 0.5 * np.sin((xx + yy) / 5.0 + 2.0 * p)
        img = _colorize(f, np.array([0.55, 0.5, 0.45]), np.array([0.9, 0.88, 0.85]))
    elif category == "dots":
        oy, ox = rng.uniform(0, 6.7, 2)
        d = np.hypot((yy + oy) % 6.7 - 3.35, (xx + ox) % 6.7 - 3.35)
        f = np.clip(2.2 - d, 0, 1)
        img = _colorize(f, np.array([0.6, 0.6, 0.65]), np.array([0.2, 0.25, 0.3]))
    elif category == "disc":
        cy, cx = size / 2 + rng.normal(0, 0.4, 2)
        r = size * 0.33 + rng.normal(0, 0.2)
        inside = np.clip(r - np.hypot(yy - cy, xx - cx), 0, 1)
        shade = 0.8 - 0.15 * (yy - cy) / size
        img = _colorize(inside * shade, np.array([0.08, 0.08, 0.1]), np.array([0.95, 0.85, 0.6]))
    else:
        raise ValueError(f"unknown fixture category {category!r}")
    img = img + rng.normal(0, 0.015, img.shape)
    return np.clip(img, 0.0, 1.0)


GRAIN = 0.2  # per-pixel spread of defect colour: damaged surfaces are rough


def _stamp(img, region, color, alpha, rng):
    a = alpha * region[..., None]
    paint = color + rng.normal(0.0, GRAIN, img.shape)
    return img * (1 - a) + paint * a


def add_defect(img: np.ndarray, kind: str, rng: np.random.Generator, on_object: bool = False):
    """Returns (defective image, mask). ``on_object`` confines the defect to
    the foreground object; textures accept defects anywhere."""
    size = img.shape[0]
    yy, xx = _grid(size)
    fg = foreground_mask(img) if on_object else np.ones(img.shape[:2], np.uint8)
    ys, xs = np.nonzero(gaussian_filter(fg.astype(float), 3) > 0.99)
    if len(ys) == 0:
        ys, xs = np.nonzero(fg)
    k = rng.integers(len(ys))
    cy, cx = ys[k], xs[k]
    color = rng.uniform(0, 1, 3)
    if kind == "scratch":
        ang = rng.uniform(0, np.pi)
        half = rng.uniform(8, 13)
        dy, dx = np.sin(ang), np.cos(ang)
        along = (yy - cy) * dy + (xx - cx) * dx
        across = -(yy - cy) * dx + (xx - cx) * dy
        region = ((np.abs(across) <= 1.0) & (np.abs(along) <= half)).astype(float)
        region *= fg
        out = _stamp(img, region, color, 0.9, rng)
    elif kind == "spot":
        ry, rx = rng.uniform(3.5, 6, 2)
        region = ((((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) <= 1).astype(float) * fg
        out = _stamp(img, region, color, 0.85, rng)
    elif kind == "smudge":
        # soft-edged stain, darker or lighter than the surface
        ry, rx = rng.uniform(4, 7, 2)
        alpha = gaussian_filter((((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1).astype(float), 1.5) * fg
        tone = np.full(3, 0.05 if rng.random() < 0.5 else 0.95)
        out = _stamp(img, alpha, tone, 0.7, rng)
        region = (alpha > 0.25).astype(float)
    else:
        raise ValueError(f"unknown defect {kind!r}")
    return np.clip(out, 0, 1), (region > 0).astype(np.uint8)


def make_category(category: str, seed: int = 0, size: int = 64, n_train: int = 8,
                  n_good: int = 10, n_defect: int = 12) -> dict:
    """{'train': [images], 'test': [FixtureItem]} for one category."""
    cat = CATEGORIES.index(category)
    train = [normal_image(category, stream(seed, cat, 0, i), size) for i in range(n_train)]
    test = []
    for i in range(n_good):
        img = normal_image(category, stream(seed, cat, 1, i), size)
        test.append(FixtureItem(img, np.zeros((size, size), np.uint8), 0, "good"))
    for i in range(n_defect):
        rng = stream(seed, cat, 2, i)
        kind = DEFECTS[i % len(DEFECTS)]
        img, mask = add_defect(normal_image(category, rng, size), kind, rng, category == "disc")
        test.append(FixtureItem(img, mask, 1, kind))
    return {"train": train, "test": test}


def write_fixture(root, seed: int = 0, size: int = 64, categories=CATEGORIES, **kw) -> Path:
    root = Path(root)
    for category in categories:
        data = make_category(category, seed, size, **kw)
        base = root / category
        for i, img in enumerate(data["train"]):
            save_image(base / "train" / "good" / f"{i:03d}.png", img)
        counters = {}
        for item in data["test"]:
            n = counters.get(item.defect, 0)
            counters[item.defect] = n + 1
            save_image(base / "test" / item.defect / f"{n:03d}.png", item.image)
            if item.label:
                save_mask(base / "ground_truth" / item.defect / f"{n:03d}_mask.png", item.mask)
    return root
