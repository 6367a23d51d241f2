"""Training objectives.

Band-wise inputs are sequences of Tensors (one per frequency band) with
shape (B, h, w) for scores and (B, h, w, C) for features; band terms are
summed, per-sample terms averaged over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


def pool_mask(m: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    """Window max of (..., H, W) masks down to (..., grid_h, grid_w)."""
    m = np.asarray(m)
    H, W = m.shape[-2:]
    if H % grid_h or W % grid_w:
        raise ValueError(f"mask {H}x{W} not divisible into {grid_h}x{grid_w}")
    lead = m.shape[:-2]
    blocks = m.reshape(lead + (grid_h, H // grid_h, grid_w, W // grid_w))
    return blocks.max(axis=(-3, -1)).astype(np.uint8)


def alt_losses(kind: str = "hinge"):
    """(normal_term, anomalous_term) elementwise penalties for scores ``s``
    with margin ``theta``; scores are positive for normal."""
    if kind == "hinge":
        return ad.hinge_pos, ad.hinge_neg
    if kind == "ce":
        return (lambda s, theta: ad.softplus(-s)), (lambda s, theta: ad.softplus(s))
    if kind == "focal":
        def pos(s, theta):
            return (1 - ad.sigmoid(s)) ** 2 * ad.softplus(-s)

        def neg(s, theta):
            return ad.sigmoid(s) ** 2 * ad.softplus(s)

        return pos, neg
    if kind == "mse":
        return (lambda s, theta: (s - theta) ** 2), (lambda s, theta: (s + theta) ** 2)
    raise ConfigError(f"unknown loss kind {kind!r}")


def _masked_mean(x, weight):
    """Per-sample mean of ``x`` over positions where weight = 1, zero when empty.
    x: (B, h, w) Tensor, weight: (B, h, w) array."""
    B = weight.shape[0]
    w = weight.reshape(B, -1).astype(x.dtype)
    count = np.maximum(w.sum(axis=1), 1.0)
    per = (x.reshape(B, -1) * w).sum(axis=1) / count.astype(x.dtype)
    return per.mean()


def similarity_loss(qa_bands, qn_bands, mprime, sign: str = "minus"):
    """1 - cos between masked anomalous and normal features, per band, summed.

    Cosine is taken over each sample's flattened masked map; samples whose
    pooled mask is empty contribute 0. ``sign='plus'`` uses 1 + cos.
    """
    mprime = np.asarray(mprime)
    B = mprime.shape[0]
    present = mprime.reshape(B, -1).any(axis=1)
    total = 0.0
    for qa, qn in zip(qa_bands, qn_bands):
        m = mprime[..., None].astype(qa.dtype)
        a = (qa * m).reshape(B, -1)
        n = (qn * m).reshape(B, -1)
        cos = ad.cosine_similarity(a, n, axis=-1)
        per = 1.0 - cos if sign == "minus" else 1.0 + cos
        total = total + (per * present.astype(qa.dtype)).mean()
    return total


def gaussian_loss(normal_bands, noised_bands, theta: float = 0.8, kind: str = "hinge"):
    pos, neg = alt_losses(kind)
    total = 0.0
    for sn, sa in zip(normal_bands, noised_bands):
        total = total + pos(sn, theta).mean() + neg(sa, theta).mean()
    return total


def pixel_loss(score_bands, mprime, theta: float = 0.8, literal: bool = False, kind: str = "hinge"):
    """Localisation loss of the Perlin discriminator.

    Default: normal-cell penalty averaged over cells outside the pooled mask
    plus anomalous-cell penalty averaged over cells inside it. ``literal``
    puts the masks inside the hinge and averages over every cell.
    """
    pos, neg = alt_losses(kind)
    mprime = np.asarray(mprime)
    total = 0.0
    for s in score_bands:
        m = mprime.astype(s.dtype)
        if literal:
            total = total + (pos(s * (1 - m), theta) + neg(s * m, theta)).mean()
        else:
            total = total + _masked_mean(pos(s, theta), 1 - m) + _masked_mean(neg(s, theta), m)
    return total


def cls_loss(score_bands, tau):
    """(tau - max_positions sigmoid(-s))^2 per band, summed; tau per sample."""
    total = 0.0
    for s in score_bands:
        B = s.shape[0]
        t = np.broadcast_to(np.asarray(tau, dtype=s.dtype), (B,))
        peak = ad.max_over_positions(ad.sigmoid(-s).reshape(B, -1), axis=-1)
        total = total + ((peak - t) ** 2).mean()
    return total


@dataclass
class LossBundle:
    sim: float
    gau: float
    pix: float
    cls: float
    per: float
    total: float
    graph: object = None  # Tensor to call backward() on

    def row(self) -> tuple:
        return self.sim, self.gau, self.pix, self.cls, self.per, self.total


def _val(x) -> float:
    return float(x.data) if isinstance(x, ad.Tensor) else float(x)


def total_loss(sim=0.0, gau=0.0, pix=0.0, cls=0.0, lambda_per=2.0, lambda_sim=0.02) -> LossBundle:
    per = (pix + cls) * 0.5
    total = gau + lambda_per * per + lambda_sim * sim
    return LossBundle(_val(sim), _val(gau), _val(pix), _val(cls), _val(per), _val(total),
                      total if isinstance(total, ad.Tensor) else None)
