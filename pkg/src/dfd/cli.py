"""Command line entry point: ``dfd <verb> [options] [key=value ...]``.

Every run writes under ``<runs>/<verb>-<seed>-<hash>`` where the hash covers
the verb, the resolved configuration and the input arguments.
Exit codes: 0 success, 2 configuration/argument error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import TrainConfig, describe, load_config
from .errors import ConfigError, DecodeError, LayoutError, NumericError, UndefinedMetricError

log = logging.getLogger("dfd")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# (gaussian, perlin, augmentation, band split, similarity loss) per ablation row
ABLATION_ROWS = (
    (True, False, False, False, False),
    (True, True, False, False, False),
    (True, True, True, False, False),
    (True, True, True, True, False),
    (True, True, True, False, True),
    (True, False, True, True, True),
    (False, True, True, True, True),
    (True, True, True, True, True),
)


def ablation_configs(cfg: TrainConfig) -> list:
    out = []
    for g, p, da, mfic, sim in ABLATION_ROWS:
        out.append(cfg.replace(gaussian_disc_on=g, perlin_disc_on=p, augment_on=da, mfic_on=mfic, sim_loss_on=sim))
    return out


def run_dir(root, verb: str, cfg: TrainConfig, *inputs) -> Path:
    h = hashlib.sha256()
    h.update(verb.encode())
    h.update(cfg.to_text().encode())
    for item in inputs:
        h.update(str(item).encode())
    path = Path(root) / f"{verb}-{cfg.seed}-{h.hexdigest()[:10]}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return f"{x:.10g}" if isinstance(x, (float, np.floating)) else str(x)


def _write_metrics(path, metrics: dict) -> None:
    lines = [f"version = {__version__}\n"] + [f"{k} = {_fmt(v)}\n" for k, v in metrics.items()]
    Path(path).write_text("".join(lines))


def _images_in(folder) -> list:
    folder = Path(folder)
    if not folder.is_dir():
        raise ConfigError(f"{folder}: not a directory")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in (".png", ".ppm"))


# -- data sources ------------------------------------------------------------------
def load_category(args, cfg: TrainConfig):
    """(train images, test list of (name, image, mask, label)) from --data or --fixture."""
    from .imagery import load_image, load_mask

    if args.data:
        from .evaluation import ingest_mvtec_layout

        cats = ingest_mvtec_layout(args.data)
        if len(cats) != 1:
            raise ConfigError("--data must point at a single category directory")
        layout = next(iter(cats.values()))
        train = [load_image(p) for p in layout.train]
        test = []
        for r in layout.test:
            img = load_image(r.path)
            mask = load_mask(r.mask_path) if r.mask_path else np.zeros(img.shape[:2], np.uint8)
            test.append((f"{r.defect}/{r.path.stem}", img, mask, r.label))
        return train, test
    from .fixture import make_category

    data = make_category(args.fixture, cfg.seed, args.size)
    counters = {}
    test = []
    for it in data["test"]:
        n = counters.get(it.defect, 0)
        counters[it.defect] = n + 1
        test.append((f"{it.defect}/{n:03d}", it.image, it.mask, it.label))
    return data["train"], test


def train_and_score(train_imgs, test, cfg: TrainConfig, log_path=None):
    from .evaluation import evaluate
    from .pipeline import score_images, train

    if len(train_imgs) < cfg.shots:
        raise ConfigError(f"need {cfg.shots} training images, found {len(train_imgs)}")
    model = train(train_imgs[: cfg.shots], cfg, log_path)
    maps, s_a = score_images([t[1] for t in test], model)
    metrics = evaluate(s_a, [t[3] for t in test], maps, [t[2] for t in test])
    return model, maps, s_a, metrics


# -- verbs -----------------------------------------------------------------------------
def cmd_synth(args, cfg):
    from .fixture import CATEGORIES, write_fixture
    from .imagery import load_image
    from .synth import augment, export_samples
    from .pipeline import prepare

    out = run_dir(args.runs, "synth", cfg, args.what, args.size, args.images)
    cats = args.categories.split(",") if args.categories else list(CATEGORIES)
    if args.what in ("fixture", "both"):
        write_fixture(out / "fixture", cfg.seed, args.size, cats)
    if args.what in ("augment", "both"):
        if args.images:
            sources = {"images": _images_in(args.images)[: cfg.shots]}
            sources = {k: [load_image(p) for p in v] for k, v in sources.items()}
        else:
            from .fixture import make_category

            sources = {c: make_category(c, cfg.seed, args.size)["train"][: cfg.shots] for c in cats}
        for name, imgs in sources.items():
            if not imgs:
                raise ConfigError(f"no source images for {name}")
            samples = []
            for s, img in enumerate(imgs):
                seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(1, s)).generate_state(1)[0])
                samples.extend(augment(prepare(img, cfg.resolution), cfg, seed))
            export_samples(samples, out / "augmented" / name)
    print(out)
    return EXIT_OK


def cmd_analyze(args, cfg):
    from .frequency import dft2, gray_histogram, high_band_energy, radial_energy
    from .imagery import load_image

    sets = {}
    for spec in args.sets:
        name, _, folder = spec.rpartition("=")
        folder = Path(folder)
        sets[name or folder.name] = _images_in(folder)
    if not sets or any(not v for v in sets.values()):
        raise ConfigError("analyze needs at least one non-empty image set")
    out = run_dir(args.runs, "analyze", cfg, *args.sets)
    summary = []
    for name, paths in sets.items():
        profiles, hists, highs = [], [], []
        for p in paths:
            img = load_image(p)
            prof = radial_energy(dft2(img))
            profiles.append(prof.energy)
            highs.append(high_band_energy(prof))
            hists.append(gray_histogram(img))
            _write_csv(out / name / f"{p.stem}_energy.csv", ["radius", "energy"],
                       [(int(r), _fmt(e)) for r, e in zip(prof.radius, prof.energy)])
            _write_csv(out / name / f"{p.stem}_histogram.csv", ["bin", "count"], enumerate(hists[-1].tolist()))
        n = min(len(e) for e in profiles)
        mean = np.mean([e[:n] for e in profiles], axis=0)
        _write_csv(out / f"{name}_energy_mean.csv", ["radius", "energy"], [(r, _fmt(e)) for r, e in enumerate(mean)])
        hist = np.mean(hists, axis=0)
        _write_csv(out / f"{name}_histogram_mean.csv", ["bin", "count"], [(k, _fmt(c)) for k, c in enumerate(hist)])
        summary.append((name, len(paths), _fmt(float(np.mean(highs)))))
    _write_csv(out / "summary.csv", ["set", "images", "high_band_energy"], summary)
    for row in summary:
        print(f"{row[0]}: {row[1]} images, mean high-band energy {row[2]}")
    print(out)
    return EXIT_OK


def cmd_train(args, cfg):
    from .pipeline import run_manifest, train

    train_imgs, _ = load_category(args, cfg)
    out = run_dir(args.runs, "train", cfg, args.data, args.fixture, args.size)
    if len(train_imgs) < cfg.shots:
        raise ConfigError(f"need {cfg.shots} training images, found {len(train_imgs)}")
    model = train(train_imgs[: cfg.shots], cfg, out / "loss.csv")
    digest = model.save(out)
    last = model.loss_rows[-1] if getattr(model, "loss_rows", None) else None
    metrics = {"steps": len(getattr(model, "loss_rows", []))}
    if last:
        metrics["final_loss"] = float(last[-1])
    _write_metrics(out / "metrics.txt", metrics)
    run_manifest(cfg, metrics, out / "manifest.txt", out / "model.dfdw")
    print(f"checkpoint sha256 {digest}")
    print(out)
    return EXIT_OK


def cmd_infer(args, cfg):
    from .imagery import load_image, save_image
    from .pipeline import ModelBundle, heat_overlay, save_score_map, score_images

    model = ModelBundle.load(args.model)
    paths = []
    for item in args.inputs:
        paths += _images_in(item) if Path(item).is_dir() else [Path(item)]
    if not paths:
        raise ConfigError("infer needs at least one image")
    out = run_dir(args.runs, "infer", model.cfg, args.model, *paths)
    imgs = [load_image(p) for p in paths]
    maps, s_a = score_images(imgs, model, args.scope)
    rows = []
    for p, img, S, a in zip(paths, imgs, maps, s_a):
        save_score_map(out / f"{p.stem}.dfds", S)
        save_image(out / f"{p.stem}_overlay.png", heat_overlay(img, S))
        rows.append((p.name, _fmt(float(a))))
    _write_csv(out / "scores.csv", ["image", "score"], rows)
    print(out)
    return EXIT_OK


def cmd_eval(args, cfg):
    from .evaluation import evaluate
    from .pipeline import ModelBundle, load_score_map, score_images

    if args.model:
        model = ModelBundle.load(args.model)
        cfg = model.cfg
    _, test = load_category(args, cfg)
    out = run_dir(args.runs, "eval", cfg, args.model, args.pred, args.data, args.fixture)
    if args.pred:
        maps = [load_score_map(Path(args.pred) / f"{name}.dfds") for name, *_ in test]
        s_a = np.array([m.max() for m in maps])
    elif args.model:
        maps, s_a = score_images([t[1] for t in test], model, args.scope)
    else:
        raise ConfigError("eval needs --model or --pred")
    metrics = evaluate(s_a, [t[3] for t in test], maps, [t[2] for t in test])
    _write_metrics(out / "metrics.txt", metrics)
    _write_csv(out / "scores.csv", ["image", "label", "score"],
               [(t[0], t[3], _fmt(float(a))) for t, a in zip(test, s_a)])
    for k, v in metrics.items():
        print(f"{k} = {v:.4f}")
    print(out)
    return EXIT_OK


def cmd_ablate(args, cfg):
    from .fixture import CATEGORIES

    cats = [None] if args.data else (args.categories.split(",") if args.categories else list(CATEGORIES))
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    out = run_dir(args.runs, "ablate", cfg, args.data, ",".join(map(str, cats)), seeds, args.size)
    rows = []
    for row, variant in enumerate(ablation_configs(cfg), start=1):
        scores = []
        for cat in cats:
            for seed in seeds:
                run_cfg = variant.replace(seed=seed)
                args.fixture = cat
                train_imgs, test = load_category(args, run_cfg)
                scores.append(train_and_score(train_imgs, test, run_cfg)[3])
        mean = {k: float(np.mean([s[k] for s in scores])) for k in scores[0]}
        flags = (variant.gaussian_disc_on, variant.perlin_disc_on, variant.augment_on, variant.mfic_on,
                 variant.sim_loss_on)
        rows.append((row,) + tuple(int(f) for f in flags) + tuple(_fmt(mean[k]) for k in ("auroc_i", "auroc_p", "pro")))
        print(f"row {row}: " + " ".join(f"{k}={mean[k]:.4f}" for k in mean), flush=True)
    _write_csv(out / "ablation.csv", ["row", "gaussian", "perlin", "augment", "mfic", "sim", "auroc_i", "auroc_p", "pro"],
               rows)
    print(out)
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    from .selfcheck import network_grad_checks

    out = run_dir(args.runs, "gradcheck", cfg)
    rows = []
    worst = 0.0
    for name, report in network_grad_checks(cfg, seed=cfg.seed):
        rows.append((name, _fmt(report.max_rel_error), report.n_checked))
        worst = max(worst, report.max_rel_error)
        print(f"{name}: max relative error {report.max_rel_error:.3e} over {report.n_checked} coordinates")
    _write_csv(out / "gradcheck.csv", ["network", "max_rel_error", "coordinates"], rows)
    print(f"max relative error {worst:.3e}")
    print(out)
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


VERBS = {
    "synth": cmd_synth,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="master seed (same as seed=...)")
    common.add_argument("--runs", default="runs", help="root directory for run outputs")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("overrides", nargs="*", default=[], metavar="key=value")

    def data_opts(p, required=True):
        g = p.add_mutually_exclusive_group(required=required)
        g.add_argument("--data", help="category directory in MVTec layout")
        g.add_argument("--fixture", help="synthetic fixture category generated in memory")
        p.add_argument("--size", type=int, default=64, help="fixture image size")

    epilog = "config keys (default, origin, meaning):\n" + describe()
    parser = argparse.ArgumentParser(prog="dfd", description="Few-shot anomaly detection with dual-path discriminators.",
                                     epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"dfd {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)
    kw = dict(parents=[common], epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)

    p = sub.add_parser("synth", help="write the fixture dataset and/or augmented sets", **kw)
    p.add_argument("--what", choices=("fixture", "augment", "both"), default="both")
    p.add_argument("--images", help="folder of normal images to augment instead of the fixture")
    p.add_argument("--categories", help="comma-separated fixture categories")
    p.add_argument("--size", type=int, default=64)

    p = sub.add_parser("analyze", help="radial energy and gray histograms per image set", **kw)
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="[NAME=]DIR")

    p = sub.add_parser("train", help="train on the first `shots` normal images", **kw)
    data_opts(p)

    p = sub.add_parser("infer", help="score images with a trained model", **kw)
    p.add_argument("--model", required=True, help="train run directory")
    p.add_argument("--input", dest="inputs", action="append", default=[], metavar="PATH")
    p.add_argument("--scope", choices=("image", "dataset"), help="min-max scaling scope")

    p = sub.add_parser("eval", help="AUROC_i, AUROC_p and PRO on a test split", **kw)
    data_opts(p)
    p.add_argument("--model", help="train run directory")
    p.add_argument("--pred", help="directory of <defect>/<stem>.dfds score maps")
    p.add_argument("--scope", choices=("image", "dataset"))

    p = sub.add_parser("ablate", help="train/evaluate the eight component configurations", **kw)
    data_opts(p, required=False)
    p.add_argument("--categories", help="comma-separated fixture categories")
    p.add_argument("--seeds", help="comma-separated seeds averaged per row")

    p = sub.add_parser("gradcheck", help="finite-difference check of the default networks", **kw)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def resolve_config(args) -> TrainConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed = {args.seed}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
    cfg = load_config(args.config, overrides)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = os.environ.get("DFD_THREADS")
    try:
        cfg = resolve_config(args)
        if threads:
            from threadpoolctl import threadpool_limits

            try:
                n = int(threads)
            except ValueError:
                raise ConfigError(f"DFD_THREADS must be an integer, got {threads!r}") from None
            with threadpool_limits(limits=max(1, n)):
                return VERBS[args.verb](args, cfg)
        return VERBS[args.verb](args, cfg)
    except (ConfigError, LayoutError, DecodeError, FileNotFoundError) as exc:
        print(f"dfd: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, UndefinedMetricError) as exc:
        print(f"dfd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
