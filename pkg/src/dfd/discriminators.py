"""Position-wise MLP (Gaussian) and MLP + one transformer layer (Perlin)
discriminators. Both map (..., h, w, C) features to (..., h, w) scores,
positive for normal features and negative for anomalous ones."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .errors import ConfigError


def _kaiming_uniform(rng, fan_in, shape, gain=1.0, dtype=np.float32):
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


def _xavier_uniform(rng, fan_in, fan_out, dtype=np.float32):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype)


def init_gaussian_disc(channels, rng, hidden=None, dtype=np.float32) -> dict:
    hidden = hidden or channels
    leaky_gain = np.sqrt(2.0 / (1 + 0.2 ** 2))
    return {
        "gauss.w1": Parameter(_kaiming_uniform(rng, channels, (channels, hidden), leaky_gain, dtype), "gauss.w1"),
        "gauss.b1": Parameter(np.zeros(hidden, dtype), "gauss.b1"),
        "gauss.w2": Parameter(_kaiming_uniform(rng, hidden, (hidden, 1), 1.0, dtype), "gauss.w2"),
        "gauss.b2": Parameter(np.zeros(1, dtype), "gauss.b2"),
    }


def gaussian_disc(q, params) -> ad.Tensor:
    w1 = params["gauss.w1"]
    q = ad.as_tensor(q, w1)
    if q.shape[-1] != w1.shape[0]:
        raise ValueError(f"Gaussian discriminator expects {w1.shape[0]} channels, got {q.shape[-1]}")
    h = ad.leaky_relu(q @ w1 + params["gauss.b1"], 0.2)
    s = h @ params["gauss.w2"] + params["gauss.b2"]
    return s.reshape(s.shape[:-1])


def init_perlin_disc(channels, tokens, rng, dim=128, heads=4, mlp_ratio=2, dtype=np.float32) -> dict:
    if dim % heads:
        raise ConfigError("token width must be divisible by head count")
    hid = dim * mlp_ratio

    def P(name, arr):
        return name, Parameter(np.asarray(arr, dtype), name)

    ones, zeros = np.ones(dim), np.zeros(dim)
    return dict([
        P("perlin.embed.w", _kaiming_uniform(rng, channels, (channels, dim), 1.0, dtype)),
        P("perlin.embed.b", zeros),
        P("perlin.ln0.w", ones), P("perlin.ln0.b", zeros),
        P("perlin.pos", rng.normal(0.0, 0.02, (tokens, dim))),
        P("perlin.ln1.w", ones), P("perlin.ln1.b", zeros),
        P("perlin.qkv.w", _xavier_uniform(rng, dim, 3 * dim, dtype)),
        P("perlin.qkv.b", np.zeros(3 * dim)),
        P("perlin.proj.w", _xavier_uniform(rng, dim, dim, dtype)),
        P("perlin.proj.b", zeros),
        P("perlin.ln2.w", ones), P("perlin.ln2.b", zeros),
        P("perlin.fc1.w", _xavier_uniform(rng, dim, hid, dtype)),
        P("perlin.fc1.b", np.zeros(hid)),
        P("perlin.fc2.w", _xavier_uniform(rng, hid, dim, dtype)),
        P("perlin.fc2.b", zeros),
        P("perlin.ln3.w", ones), P("perlin.ln3.b", zeros),
        P("perlin.head.w", _xavier_uniform(rng, dim, 1, dtype)),
        P("perlin.head.b", np.zeros(1)),
    ])


def perlin_disc(q, params, heads=4, return_attention=False):
    p = params
    q = ad.as_tensor(q, p["perlin.embed.w"])
    grid = q.shape[-3:-1]
    lead = q.shape[:-3]
    T, D = p["perlin.pos"].shape
    if grid[0] * grid[1] != T:
        raise ConfigError(f"feature grid {grid} does not match {T} trained positions")
    if q.shape[-1] != p["perlin.embed.w"].shape[0]:
        raise ValueError("Perlin discriminator channel mismatch")
    B = int(np.prod(lead)) if lead else 1
    dh = D // heads

    # token norm: content enters at unit scale whatever the feature scale
    x = q.reshape(B, T, q.shape[-1]) @ p["perlin.embed.w"] + p["perlin.embed.b"]
    x = ad.layernorm(x, p["perlin.ln0.w"], p["perlin.ln0.b"]) + p["perlin.pos"]

    y = ad.layernorm(x, p["perlin.ln1.w"], p["perlin.ln1.b"])
    qkv = (y @ p["perlin.qkv.w"] + p["perlin.qkv.b"]).reshape(B, T, 3, heads, dh)
    qkv = qkv.transpose(2, 0, 3, 1, 4)
    qh, kh, vh = qkv[0], qkv[1], qkv[2]
    att = ad.softmax((qh @ kh.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)), axis=-1)
    o = (att @ vh).transpose(0, 2, 1, 3).reshape(B, T, D)
    x = x + (o @ p["perlin.proj.w"] + p["perlin.proj.b"])

    y = ad.layernorm(x, p["perlin.ln2.w"], p["perlin.ln2.b"])
    y = ad.gelu(y @ p["perlin.fc1.w"] + p["perlin.fc1.b"]) @ p["perlin.fc2.w"] + p["perlin.fc2.b"]
    x = x + y

    y = ad.layernorm(x, p["perlin.ln3.w"], p["perlin.ln3.b"])
    s = (y @ p["perlin.head.w"] + p["perlin.head.b"]).reshape(lead + tuple(grid))
    if return_attention:
        return s, att.data.reshape(lead + (heads, T, T))
    return s
