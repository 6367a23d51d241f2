"""Image/pixel AUROC, per-region overlap, and MVTec-layout ingestion."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import label
from scipy.stats import rankdata

from .errors import LayoutError, UndefinedMetricError

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with mid-ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def pixel_auroc(maps, gts) -> float:
    maps = np.concatenate([np.asarray(m, np.float64).ravel() for m in maps])
    gts = np.concatenate([np.asarray(g).ravel() > 0 for g in gts])
    return auroc(maps, gts)


def _area_upto(x, y, limit):
    """Trapezoid area under the polyline (x, y) on [x[0], limit]."""
    keep = x <= limit
    xs, ys = list(x[keep]), list(y[keep])
    beyond = np.nonzero(~keep)[0]
    if xs and len(beyond) and xs[-1] < limit:
        j = beyond[0]
        x0, y0 = xs[-1], ys[-1]
        xs.append(limit)
        ys.append(y0 + (y[j] - y0) * (limit - x0) / (x[j] - x0))
    if len(xs) < 2:
        return 0.0
    xs, ys = np.asarray(xs), np.asarray(ys)
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2))


def pro_curve(maps, gts, thresholds=200):
    """(fpr, overlap) per threshold, ordered from the highest threshold down.

    ``thresholds`` is a count of evenly spaced levels between the global
    score min and max, or None for every distinct score value. A pixel is
    predicted anomalous when its score >= threshold.
    """
    maps = [np.asarray(m, np.float64) for m in maps]
    gts = [np.asarray(g) > 0 for g in gts]
    regions = []
    normal = []
    for m, g in zip(maps, gts):
        lab, n = label(g, structure=EIGHT_CONNECTED)
        for r in range(1, n + 1):
            regions.append(np.sort(m[lab == r]))
        normal.append(m[~g])
    if not regions:
        raise UndefinedMetricError("PRO needs at least one anomalous region")
    normal = np.sort(np.concatenate(normal))
    if normal.size == 0:
        raise UndefinedMetricError("PRO needs normal pixels to measure false positives")
    allv = np.concatenate([np.concatenate([m.ravel() for m in maps])])
    if thresholds is None:
        levels = np.unique(allv)
    else:
        levels = np.linspace(allv.min(), allv.max(), thresholds)
    levels = levels[::-1]
    fpr = (normal.size - np.searchsorted(normal, levels, side="left")) / normal.size
    overlap = np.mean([(r.size - np.searchsorted(r, levels, side="left")) / r.size for r in regions], axis=0)
    return fpr, overlap


def pro(maps, gts, fpr_limit: float = 0.3, thresholds=200) -> float:
    """Per-region overlap integrated over FPR in [0, fpr_limit], normalised."""
    fpr, overlap = pro_curve(maps, gts, thresholds)
    return _area_upto(fpr, overlap, fpr_limit) / fpr_limit


# -- dataset layout -------------------------------------------------------------
@dataclass
class Record:
    path: Path
    label: int
    mask_path: Path | None
    defect: str


@dataclass
class CategoryLayout:
    name: str
    train: list
    test: list


def _pngs(d: Path):
    return sorted(p for p in d.iterdir() if p.suffix.lower() in (".png", ".ppm", ".pgm"))


def ingest_category(cat_dir) -> CategoryLayout:
    cat_dir = Path(cat_dir)
    train_dir, test_dir = cat_dir / "train" / "good", cat_dir / "test"
    if not train_dir.is_dir() or not test_dir.is_dir():
        raise LayoutError(f"{cat_dir}: expected train/good and test directories")
    records = []
    for d in sorted(p for p in test_dir.iterdir() if p.is_dir()):
        if d.name == "good":
            records += [Record(p, 0, None, "good") for p in _pngs(d)]
            continue
        gt_dir = cat_dir / "ground_truth" / d.name
        if not gt_dir.is_dir():
            raise LayoutError(f"{cat_dir}: no ground_truth for defect {d.name!r}")
        for p in _pngs(d):
            cands = [gt_dir / f"{p.stem}_mask{p.suffix}", gt_dir / f"{p.stem}_mask.png", gt_dir / p.name]
            mask = next((c for c in cands if c.exists()), None)
            if mask is None:
                raise LayoutError(f"{p}: ground-truth mask missing")
            records.append(Record(p, 1, mask, d.name))
    if not records:
        raise LayoutError(f"{cat_dir}: empty test set")
    return CategoryLayout(cat_dir.name, _pngs(train_dir), records)


def ingest_mvtec_layout(root) -> dict:
    """{category: CategoryLayout}; ``root`` may also be a single category dir."""
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"{root}: not a directory")
    if (root / "train").is_dir():
        return {root.name: ingest_category(root)}
    cats = {p.name: ingest_category(p) for p in sorted(root.iterdir()) if p.is_dir()}
    if not cats:
        raise LayoutError(f"{root}: no categories found")
    return cats


def evaluate(scores, labels, maps, gts, fpr_limit=0.3, thresholds=200) -> dict:
    return {
        "auroc_i": auroc(scores, labels),
        "auroc_p": pixel_auroc(maps, gts),
        "pro": pro(maps, gts, fpr_limit, thresholds),
    }
