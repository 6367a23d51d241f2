"""Finite-difference checks of the trainable networks and objectives.

Everything runs in float64 on small instances: 8 channels on a 2x2 grid,
a 16-wide transformer with 2 heads.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .backbone import adapt
from .discriminators import gaussian_disc, init_gaussian_disc, init_perlin_disc, perlin_disc
from .losses import cls_loss, gaussian_loss, pixel_loss, similarity_loss

C, GRID, DIM, HEADS = 8, 2, 16, 2


def _as64(params: dict) -> dict:
    return {k: ad.Parameter(np.asarray(p.data, np.float64), k) for k, p in params.items()}


def _weight_checks(prefix, params, fn, step, max_coords, seed):
    """Check ``fn(params)`` against each parameter tensor in turn."""
    for name in sorted(params):
        def f(x, name=name):
            local = dict(params)
            local[name] = x
            return fn(local)

        yield f"{prefix}[{name}]", ad.grad_check(f, params[name].data, step=step, max_coords=max_coords, seed=seed)


def network_grad_checks(cfg=None, seed=0, step=1e-4, max_coords=24):
    """Yields (name, GradCheckReport) for the adaptor, both discriminators
    and each loss term composed with its discriminator."""
    rng = np.random.default_rng(seed)
    q = rng.normal(0, 1, (2, GRID, GRID, C))
    qa = rng.normal(0, 1, (2, GRID, GRID, C))
    mask = np.array([[[1, 0], [0, 0]], [[0, 1], [1, 0]]], np.uint8)
    W = ad.Parameter(np.eye(C) + rng.normal(0, 0.1, (C, C)), "adaptor.weight")
    gauss = _as64(init_gaussian_disc(C, rng))
    perlin = _as64(init_perlin_disc(C, GRID * GRID, rng, DIM, HEADS, 2))
    theta = 0.8 if cfg is None else cfg.theta

    def adaptor_out(x):
        return (adapt(q, x) ** 2).mean()

    yield "adaptor", ad.grad_check(adaptor_out, W.data, step=step, max_coords=max_coords, seed=seed)
    yield "gaussian_disc[input]", ad.grad_check(lambda x: gaussian_disc(x, gauss).mean(), q, step=step,
                                                max_coords=max_coords, seed=seed)
    yield from _weight_checks("gaussian_disc", gauss, lambda p: (gaussian_disc(q, p) ** 2).mean(), step,
                              max_coords, seed)
    yield "perlin_disc[input]", ad.grad_check(lambda x: (perlin_disc(x, perlin, HEADS) ** 2).mean(), q, step=step,
                                              max_coords=max_coords, seed=seed)
    yield from _weight_checks("perlin_disc", perlin, lambda p: (perlin_disc(q, p, HEADS) ** 2).mean(), step,
                              max_coords, seed)

    def gau(x):
        s = gaussian_disc(x, gauss)
        return gaussian_loss([s[0:1], s[1:2]], [s[1:2] * 0.5, s[0:1] * 0.5], theta)

    def pix(x):
        s = perlin_disc(x, perlin, HEADS)
        return pixel_loss([s, s * 0.7], mask, theta)

    def cls(x):
        s = perlin_disc(x, perlin, HEADS)
        return cls_loss([s, s * 0.7], np.array([1.0, 0.0]))

    def sim(x):
        return similarity_loss([adapt(x, W)], [adapt(qa, W)], mask)

    for name, fn in (("gaussian_loss", gau), ("pixel_loss", pix), ("cls_loss", cls), ("similarity_loss", sim)):
        yield name, ad.grad_check(fn, q, step=step, max_coords=max_coords, seed=seed)
