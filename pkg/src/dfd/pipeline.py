"""Few-shot training loop, model bundles and score-map inference."""
from __future__ import annotations

import datetime
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .autodiff import weights as dfdw
from .backbone import BackboneSpec, adapt, get_backbone, init_adaptor
from .config import TrainConfig, from_text, parse_pairs
from .discriminators import gaussian_disc, init_gaussian_disc, init_perlin_disc, perlin_disc
from .errors import ConfigError, DecodeError, NumericError
from .frequency import split_frequency
from .imagery import resize, standardize
from .losses import cls_loss, gaussian_loss, pixel_loss, pool_mask, similarity_loss, total_loss
from .synth import augment, stream

log = logging.getLogger(__name__)

MAX_SHOTS = 16
EPS_RANGE = 1e-12


@dataclass
class ModelBundle:
    cfg: TrainConfig
    adaptor: ad.Parameter
    gauss: dict = field(default_factory=dict)
    perlin: dict = field(default_factory=dict)

    @property
    def backbone_spec(self) -> BackboneSpec:
        return BackboneSpec.from_config(self.cfg)

    @property
    def grid(self) -> tuple:
        return self.cfg.grid, self.cfg.grid

    def parameters(self) -> dict:
        out = {"adaptor.weight": self.adaptor}
        out.update(self.gauss)
        out.update(self.perlin)
        return out

    def state(self) -> dict:
        return {k: p.data for k, p in self.parameters().items()}

    def save(self, outdir) -> str:
        """Write model.dfdw + model.cfg; returns the sha256 of model.dfdw."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "model.cfg").write_text(self.cfg.to_text())
        return dfdw.save(outdir / "model.dfdw", self.state())

    @classmethod
    def load(cls, indir) -> "ModelBundle":
        indir = Path(indir)
        cfg = from_text((indir / "model.cfg").read_text())
        tensors = dfdw.load(indir / "model.dfdw")
        if "adaptor.weight" not in tensors:
            raise DecodeError("checkpoint lacks adaptor.weight")
        params = {k: ad.Parameter(v, k) for k, v in tensors.items()}
        return cls(
            cfg,
            params["adaptor.weight"],
            {k: p for k, p in params.items() if k.startswith("gauss.")},
            {k: p for k, p in params.items() if k.startswith("perlin.")},
        )


def prepare(img: np.ndarray, resolution: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] != (resolution, resolution):
        img = resize(img, resolution, resolution)
    return img


def band_features(images: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """(n, H, W, 3) images in [0, 1] -> (n, bands, h, w, C) frozen features."""
    bb = get_backbone(BackboneSpec.from_config(cfg))
    out = []
    for chunk in np.array_split(images, max(1, len(images) // 32)):
        x = standardize(chunk)
        if cfg.mfic_on:
            # split works on the two leading (spatial) axes
            low, high = split_frequency(np.moveaxis(x, 0, 2))
            feats = bb(np.concatenate([np.moveaxis(low, 2, 0), np.moveaxis(high, 2, 0)]))
            feats = np.stack([feats[: len(chunk)], feats[len(chunk):]], axis=1)
        else:
            feats = bb(x)[:, None]
        out.append(feats)
    return np.concatenate(out).astype(np.float32)


def init_model(cfg: TrainConfig) -> ModelBundle:
    C = BackboneSpec.from_config(cfg).channels
    rng = stream(cfg.seed, 2)
    gauss = init_gaussian_disc(C, rng) if cfg.gaussian_disc_on else {}
    perlin = (init_perlin_disc(C, cfg.grid * cfg.grid, rng, cfg.vit_dim, cfg.vit_heads, cfg.vit_mlp_ratio)
              if cfg.perlin_disc_on else {})
    return ModelBundle(cfg, init_adaptor(C), gauss, perlin)


@dataclass
class TrainingSet:
    normal: np.ndarray  # (S, bands, h, w, C)
    anomalous: np.ndarray
    pooled: np.ndarray  # (S, h, w)
    tau: np.ndarray  # (S,)


def build_training_set(shots, cfg: TrainConfig) -> TrainingSet:
    samples = []
    for s, img in enumerate(shots):
        seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(1, s)).generate_state(1)[0])
        samples.extend(augment(prepare(img, cfg.resolution), cfg, seed))
    src = np.stack([s.source for s in samples])
    normal = band_features(src, cfg)
    anomalous = normal.copy()
    idx = [k for k, s in enumerate(samples) if s.is_anomalous]
    if idx:
        anomalous[idx] = band_features(np.stack([samples[k].image for k in idx]), cfg)
    pooled = pool_mask(np.stack([s.mask for s in samples]), cfg.grid, cfg.grid)
    tau = np.array([float(s.mask.any()) for s in samples], np.float32)
    return TrainingSet(normal, anomalous, pooled, tau)


def train_step(model: ModelBundle, pn, pa, pooled, tau, noise_seed) -> "ad.Tensor":
    cfg = model.cfg
    pn = np.moveaxis(pn, 1, 0)  # (bands, B, h, w, C)
    pa = np.moveaxis(pa, 1, 0)
    nb = pn.shape[0]
    q = adapt(np.stack([pn, pa]), model.adaptor)
    qn, qa = q[0], q[1]
    qn_b = [qn[b] for b in range(nb)]
    qa_b = [qa[b] for b in range(nb)]
    sim = gau = pix = cls = 0.0
    if cfg.gaussian_disc_on:
        eps = stream(noise_seed, 0).normal(cfg.noise_mean, cfg.noise_std, qn.shape).astype(np.float32)
        scores = gaussian_disc(ad.concat([qn, qn + eps]), model.gauss)
        gau = gaussian_loss([scores[b] for b in range(nb)], [scores[nb + b] for b in range(nb)],
                            cfg.theta, cfg.loss_kind)
    if cfg.perlin_disc_on:
        sp = perlin_disc(qa, model.perlin, cfg.vit_heads)
        sp_b = [sp[b] for b in range(nb)]
        pix = pixel_loss(sp_b, pooled, cfg.theta, cfg.literal_eq10, cfg.loss_kind)
        cls = cls_loss(sp_b, tau)
    if cfg.sim_loss_on:
        sim = similarity_loss(qa_b, qn_b, pooled, cfg.sim_sign)
    return total_loss(sim, gau, pix, cls, cfg.lambda_per, cfg.lambda_sim)


def train(shots, cfg: TrainConfig, log_path=None) -> ModelBundle:
    """Train adaptor and discriminators on augmented few-shot normals."""
    shots = list(shots)
    if not shots:
        raise ValueError("need at least one training image")
    if len(shots) > MAX_SHOTS:
        raise ValueError(f"at most {MAX_SHOTS} shots supported")
    model = init_model(cfg)
    if cfg.epochs == 0:
        return model

    data = build_training_set(shots, cfg)
    groups = [([model.adaptor], cfg.lr_adaptor)]
    if model.gauss:
        groups.append((list(model.gauss.values()), cfg.lr_gauss))
    if model.perlin:
        groups.append((list(model.perlin.values()), cfg.lr_perlin))
    opt = ad.Adam(groups)

    rows = []
    n = len(data.tau)
    step = 0
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, 3, epoch).permutation(n)
        for start in range(0, n, cfg.batch):
            idx = np.sort(order[start:start + cfg.batch])
            try:
                bundle = train_step(model, data.normal[idx], data.anomalous[idx], data.pooled[idx],
                                    data.tau[idx], stream(cfg.seed, 4, step).integers(2 ** 63))
            except NumericError as exc:
                raise NumericError(f"step {step}: {exc}") from exc
            if not np.isfinite(bundle.total):
                raise NumericError(f"step {step}: non-finite loss")
            opt.zero_grad()
            bundle.graph.backward()
            opt.step()
            rows.append((step, epoch) + bundle.row())
            step += 1
        log.debug("epoch %d loss %.4f", epoch, np.mean([r[-1] for r in rows if r[1] == epoch]))
    if log_path is not None:
        write_loss_log(log_path, rows)
    model.loss_rows = rows
    return model


def write_loss_log(path, rows) -> None:
    lines = ["step,sim,gau,pix,cls,per,total\n"]
    for r in rows:
        lines.append(f"{r[0]}," + ",".join(f"{v:.6g}" for v in r[2:]) + "\n")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(lines))


# -- inference ----------------------------------------------------------------
def raw_scores(img: np.ndarray, model: ModelBundle) -> dict:
    """Band-summed discriminator outputs, negated so larger = more anomalous."""
    cfg = model.cfg
    feats = band_features(prepare(img, cfg.resolution)[None], cfg)[0]
    out = {}
    with ad.no_grad():
        q = adapt(feats, model.adaptor)
        if cfg.gaussian_disc_on:
            out["gau"] = -gaussian_disc(q, model.gauss).data.sum(axis=0)
        if cfg.perlin_disc_on:
            out["per"] = -perlin_disc(q, model.perlin, cfg.vit_heads).data.sum(axis=0)
    return out


def minmax(x: np.ndarray, lo=None, hi=None) -> np.ndarray:
    lo = x.min() if lo is None else lo
    hi = x.max() if hi is None else hi
    if hi - lo < EPS_RANGE:
        return np.zeros_like(x, dtype=np.float64)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def combine(raw: dict, out_hw, stats=None):
    """Scale each path to [0, 1], average, upsample; returns (S, S_A)."""
    scaled = []
    for key, m in raw.items():
        lo, hi = stats[key] if stats else (None, None)
        scaled.append(minmax(m.astype(np.float64), lo, hi))
    s_prime = np.mean(scaled, axis=0)
    S = resize(s_prime, *out_hw)
    return S, float(S.max())


def score_image(img: np.ndarray, model: ModelBundle, stats=None):
    """Anomaly map at the image's resolution and the image score max(S).

    ``stats`` maps path name -> (min, max) for set-level scaling; without
    it each map is scaled by its own range."""
    raw = raw_scores(img, model)
    return combine(raw, img.shape[:2], stats)


def score_images(images, model: ModelBundle, scope=None):
    """Score a set; with ``scope='dataset'`` min-max ranges span the whole set."""
    scope = scope or model.cfg.score_norm
    raws = [raw_scores(img, model) for img in images]
    stats = None
    if scope == "dataset":
        stats = {k: (min(r[k].min() for r in raws), max(r[k].max() for r in raws)) for k in raws[0]}
    results = [combine(r, img.shape[:2], stats) for r, img in zip(raws, images)]
    return [r[0] for r in results], np.array([r[1] for r in results])


def params_hash(model: ModelBundle) -> str:
    import hashlib

    return hashlib.sha256(dfdw.dumps(model.state())).hexdigest()


# -- score map files ------------------------------------------------------------
def save_score_map(path, S: np.ndarray) -> None:
    S = np.asarray(S, dtype="<f4")
    header = b"DFDS" + np.array(S.shape, dtype="<u4").tobytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + S.tobytes())


def load_score_map(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != b"DFDS":
        raise DecodeError(f"{path}: not a DFDS file")
    h, w = np.frombuffer(buf, dtype="<u4", count=2, offset=4)
    return np.frombuffer(buf, dtype="<f4", count=int(h * w), offset=12).reshape(int(h), int(w)).copy()


def heat_overlay(img: np.ndarray, S: np.ndarray, alpha=0.5) -> np.ndarray:
    heat = np.stack([S, np.zeros_like(S), 1.0 - S], axis=-1)
    return (1 - alpha) * img + alpha * heat


# -- run manifests ----------------------------------------------------------------
def run_manifest(cfg: TrainConfig, results: dict, path, checkpoint=None, timestamp=True) -> Path:
    """Structured text report: metadata, [config] snapshot, [metrics]."""
    lines = ["# dfd run manifest\n"]
    if timestamp:
        lines.append(f"timestamp = {datetime.datetime.now(datetime.timezone.utc).isoformat()}\n")
    lines.append(f"version = {__version__}\n")
    lines.append(f"seed = {cfg.seed}\n")
    lines.append("score_polarity = negated\n")
    if checkpoint is not None:
        lines.append(f"checkpoint = {Path(checkpoint).name}\n")
        lines.append(f"checkpoint_sha256 = {dfdw.file_hash(checkpoint)}\n")
    lines.append("[config]\n")
    lines.append(cfg.to_text())
    lines.append("[metrics]\n")
    for k, v in results.items():
        lines.append(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(lines))
    return path


def read_manifest(path):
    """Returns (meta dict, TrainConfig, metrics dict)."""
    sections = {"meta": [], "config": [], "metrics": []}
    current = "meta"
    for line in Path(path).read_text().splitlines():
        stripped = line.strip()
        if stripped in ("[config]", "[metrics]"):
            current = stripped[1:-1]
            continue
        if stripped and not stripped.startswith("#"):
            sections[current].append(stripped)
    meta = dict(tuple(s.strip() for s in l.split("=", 1)) for l in sections["meta"])
    metrics = {}
    for l in sections["metrics"]:
        k, v = (s.strip() for s in l.split("=", 1))
        try:
            metrics[k] = float(v)
        except ValueError:
            metrics[k] = v
    return meta, TrainConfig(**parse_pairs(sections["config"])), metrics


def verify_checkpoint(manifest_path, checkpoint) -> bool:
    meta, _, _ = read_manifest(manifest_path)
    expected = meta.get("checkpoint_sha256")
    if expected is None:
        raise ConfigError("manifest records no checkpoint hash")
    return dfdw.file_hash(checkpoint) == expected
