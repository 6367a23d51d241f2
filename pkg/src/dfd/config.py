"""Run configuration: a flat ``key = value`` file mirroring TrainConfig.

Each field carries a short help string and an origin tag:
``reported`` (value published with the method), ``chosen`` (default picked
here where the method leaves it open) or ``plumbing``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


def _f(default, help, tag="chosen"):
    if isinstance(default, (list, tuple)):
        return field(default_factory=lambda: tuple(default), metadata={"help": help, "tag": tag})
    return field(default=default, metadata={"help": help, "tag": tag})


@dataclass
class TrainConfig:
    shots: int = _f(2, "normal images used for training", "reported")
    N: int = _f(80, "augmented samples per shot", "reported")
    anomaly_prob: float = _f(0.7, "probability a sample receives an image-level defect", "reported")
    rotation_deg: float = _f(90.0, "rotation drawn uniformly from (-deg, deg)", "reported")
    epochs: int = _f(80, "passes over the augmented set", "reported")
    batch: int = _f(8, "samples per optimisation step", "reported")
    lr_adaptor: float = _f(5e-4, "Adam learning rate, feature adaptor", "reported")
    lr_gauss: float = _f(2e-3, "Adam learning rate, Gaussian discriminator (10x the full-schedule rate for the short desk schedule)", "chosen")
    lr_perlin: float = _f(1e-4, "Adam learning rate, Perlin discriminator", "reported")
    theta: float = _f(0.8, "hinge margin", "reported")
    tau_policy: str = _f("mask", "image label for the classification loss: 1 iff mask nonempty")
    lambda_per: float = _f(2.0, "weight of the Perlin loss (1.0 for VisA-style runs)", "reported")
    lambda_sim: float = _f(0.02, "weight of the similarity loss (1.0 for VisA-style runs)", "reported")
    noise_mean: float = _f(0.0, "feature noise mean")
    noise_std: float = _f(0.015, "feature noise standard deviation")
    resolution: int = _f(256, "square input resolution", "reported")
    seed: int = _f(0, "master seed for every random stream", "plumbing")
    perlin_threshold: float = _f(0.5, "binarisation threshold on the Perlin field")
    perlin_periods: tuple = _f((2, 4, 8, 16, 32), "lattice cells per axis at 256 px (scaled with resolution), drawn uniformly")
    beta_min: float = _f(0.15, "lower bound of the blend opacity")
    beta_max: float = _f(1.0, "upper bound of the blend opacity")
    texture_mode: str = _f("procedural", "procedural | folder")
    texture_dir: str = _f("", "PNG folder for texture_mode = folder")
    backbone: str = _f("random-conv", "random-conv | imported")
    backbone_seed: int = _f(0, "seed of the frozen random trunk")
    backbone_weights: str = _f("", "DFDW file for backbone = imported")
    aggregate: int = _f(3, "local averaging neighbourhood of backbone features at 256 px (scaled with resolution)")
    vit_dim: int = _f(128, "token width of the Perlin discriminator")
    vit_heads: int = _f(4, "attention heads")
    vit_mlp_ratio: int = _f(2, "transformer MLP expansion")
    mfic_on: bool = _f(True, "split inputs into low/high bands (off: raw image)")
    gaussian_disc_on: bool = _f(True, "train and score with the Gaussian discriminator")
    perlin_disc_on: bool = _f(True, "train and score with the Perlin discriminator")
    sim_loss_on: bool = _f(True, "include the similarity loss")
    augment_on: bool = _f(True, "rotation + N samples per shot (off: one unrotated sample)")
    literal_eq10: bool = _f(False, "pixel loss with masks inside the hinge")
    sim_sign: str = _f("minus", "minus: 1 - cos | plus: 1 + cos")
    loss_kind: str = _f("hinge", "hinge | ce | focal | mse")
    score_norm: str = _f("dataset", "min-max scope for score maps: dataset | image")

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.N < 1 or self.epochs < 0 or self.batch < 1:
            raise ConfigError("N and batch must be >= 1, epochs >= 0")
        if min(self.lr_adaptor, self.lr_gauss, self.lr_perlin) <= 0:
            raise ConfigError("learning rates must be > 0")
        if not 0.0 <= self.anomaly_prob <= 1.0:
            raise ConfigError("anomaly_prob must lie in [0, 1]")
        if not 0.0 <= self.beta_min <= self.beta_max <= 1.0:
            raise ConfigError("need 0 <= beta_min <= beta_max <= 1")
        if self.noise_std <= 0:
            raise ConfigError("noise_std must be > 0")
        if not self.perlin_periods or min(self.perlin_periods) < 1:
            raise ConfigError("perlin_periods must be positive")
        if self.resolution < 16 or self.resolution % 16:
            raise ConfigError("resolution must be a multiple of 16")
        if not (self.gaussian_disc_on or self.perlin_disc_on):
            raise ConfigError("at least one discriminator must be enabled")
        choices = {
            "texture_mode": ("procedural", "folder"),
            "backbone": ("random-conv", "imported"),
            "sim_sign": ("minus", "plus"),
            "loss_kind": ("hinge", "ce", "focal", "mse"),
            "score_norm": ("dataset", "image"),
            "tau_policy": ("mask",),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}")
        if self.vit_dim % self.vit_heads:
            raise ConfigError("vit_dim must be divisible by vit_heads")

    @property
    def grid(self) -> int:
        return self.resolution // 8

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in dataclasses.asdict(self).items())


FIELDS = {f.name: f for f in fields(TrainConfig)}


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key: str, raw: str):
    if key not in FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_pairs(lines) -> dict:
    out = {}
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        out[key] = parse_value(key, raw)
    return out


def from_text(text: str, overrides=None) -> TrainConfig:
    values = parse_pairs(text.splitlines())
    if overrides:
        values.update(parse_pairs(overrides))
    return TrainConfig(**values)


def load_config(path=None, overrides=None) -> TrainConfig:
    text = Path(path).read_text() if path else ""
    return from_text(text, overrides)


def describe() -> str:
    """One line per key: name, default, origin tag, help."""
    rows = []
    for f in fields(TrainConfig):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        rows.append(f"  {f.name} = {format_value(default)}  [{f.metadata['tag']}] {f.metadata['help']}")
    return "\n".join(rows)
