"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
The end-to-end criteria train 100 small models on the synthetic fixture and
take a while on one core.
"""
import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from threadpoolctl import threadpool_limits

from dfd import autodiff as ad
from dfd.cli import main
from dfd.config import TrainConfig
from dfd.evaluation import auroc, pixel_auroc, pro
from dfd.fixture import CATEGORIES, make_category
from dfd.frequency import dft2, gray_histogram, high_band_energy, radial_energy, split_frequency
from dfd.losses import cls_loss, gaussian_loss
from dfd.pipeline import score_images, train
from dfd.selfcheck import network_grad_checks
from dfd.synth import blend_anomaly

from test_autodiff import PRIMITIVES
from test_evaluation import exhaustive_pro, pairwise_auroc
from test_frequency import direct_dft

SEEDS = (1, 2, 3, 4, 5)
FIXTURE_RUN = dict(resolution=64, shots=2, epochs=20)
RUN_LIMIT_S = 300.0


def test_criterion_01_band_split_reconstruction(verdict):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        img = rng.uniform(0, 1, (256, 256, 3))
        low, high = split_frequency(img)
        worst = max(worst, float(np.max(np.abs(img - (low + high)))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 10.0
    verdict(1, ok, f"band split: max|I - (I_l + I_h)| = {worst:.1e} on 100 images in {elapsed:.1f} s")
    assert ok


def test_criterion_02_dft_oracle_and_parseval(verdict):
    rng = np.random.default_rng(1)
    worst = worst_parseval = 0.0
    for _ in range(20):
        img = rng.uniform(0, 1, (8, 8))
        F = dft2(img)
        worst = max(worst, float(np.max(np.abs(F - direct_dft(img)))))
        energy = np.sum(img ** 2)
        worst_parseval = max(worst_parseval, abs(np.sum(np.abs(F) ** 2) / img.size - energy) / energy)
    ok = worst < 1e-9 and worst_parseval < 1e-6
    verdict(2, ok, f"DFT vs double sum {worst:.1e}, Parseval relative error {worst_parseval:.1e}")
    assert ok


def test_criterion_03_gradient_suite(verdict):
    t0 = time.perf_counter()
    reports = [(name, ad.grad_check(fn, np.asarray(x, np.float64), step=1e-4)) for name, fn, x in PRIMITIVES]
    reports += list(network_grad_checks(step=1e-4))
    elapsed = time.perf_counter() - t0
    name, worst = max(((n, r.max_rel_error) for n, r in reports), key=lambda t: t[1])
    ok = worst < 1e-3 and elapsed < 60.0
    verdict(3, ok, f"{len(reports)} finite-difference checks, worst {worst:.1e} ({name}), {elapsed:.1f} s")
    assert ok


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 1), st.integers(1, 16), st.integers(1, 16))
def _blend_property(seed, beta, h, w):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 1, (h, w, 3))
    tex = rng.uniform(0, 1, (h, w, 3))
    m = (rng.uniform(size=(h, w)) < rng.uniform()).astype(np.uint8)
    out = blend_anomaly(img, tex, m, beta).image
    assert np.array_equal(out[m == 0], img[m == 0])
    assert np.array_equal(blend_anomaly(img, tex, m, 1.0).image[m == 1], tex[m == 1])


def test_criterion_04_blending_contract(verdict):
    try:
        _blend_property()
        ok, detail = True, "1000 random (I, I_t, M, beta): M=0 pixels untouched, M=1 at beta=1 equal to texture"
    except AssertionError as exc:
        ok, detail = False, f"blend contract violated: {exc}"
    verdict(4, ok, detail)
    assert ok


def test_criterion_05_loss_hand_values(verdict):
    zeros = [ad.Tensor(np.zeros((1, 4, 4))) for _ in range(2)]
    gau = float(gaussian_loss(zeros, zeros, theta=0.8).data)
    cls = float(cls_loss(zeros, 1.0).data)
    ok = abs(gau - 3.2) < 1e-6 and abs(cls - 0.5) < 1e-6
    verdict(5, ok, f"Gaussian hinge at s=0: {gau:.6f} (3.2), classification at s=0, tau=1: {cls:.6f} (0.5)")
    assert ok


def test_criterion_06_metric_oracles(verdict):
    scores = np.array([0.3, 0.7, 0.7, 0.1, 0.5, 0.9])
    auroc_err = 0.0
    for labels in itertools.product([0, 1], repeat=6):
        if 0 < sum(labels) < 6:
            auroc_err = max(auroc_err, abs(auroc(scores, labels) - pairwise_auroc(scores, labels)))
    rng = np.random.default_rng(2)
    pro_err = 0.0
    for _ in range(10):
        g = np.zeros((8, 8), np.uint8)
        y, x = rng.integers(0, 5, 2)
        g[y:y + rng.integers(1, 4), x:x + rng.integers(1, 4)] = 1
        m = rng.uniform(size=(8, 8)) + 0.5 * g
        pro_err = max(pro_err, abs(pro([m], [g], thresholds=None) - exhaustive_pro([m], [g])))
    ok = auroc_err < 1e-12 and pro_err < 1e-6
    verdict(6, ok, f"AUROC vs pairwise on 62 labelings {auroc_err:.1e}, PRO vs exhaustive sweep {pro_err:.1e}")
    assert ok


def _fixture_run(category, seed, **flags):
    cfg = TrainConfig(seed=seed, **FIXTURE_RUN, **flags)
    data = make_category(category, seed, cfg.resolution)
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        model = train(data["train"][: cfg.shots], cfg)
        maps, s_a = score_images([it.image for it in data["test"]], model)
    elapsed = time.perf_counter() - t0
    labels = [it.label for it in data["test"]]
    return auroc(s_a, labels), pixel_auroc(maps, [it.mask for it in data["test"]]), elapsed


@pytest.fixture(scope="module")
def fixture_runs():
    """(AUROC_i, AUROC_p, seconds) per (mode, category, seed); filled lazily."""
    cache = {}

    def get(mode, **flags):
        for c in CATEGORIES:
            for s in SEEDS:
                if (mode, c, s) not in cache:
                    cache[mode, c, s] = _fixture_run(c, s, **flags)
        return np.array([cache[mode, c, s] for c in CATEGORIES for s in SEEDS])

    return get


def test_criterion_07_fixture_end_to_end(verdict, fixture_runs):
    runs = fixture_runs("full")
    mean_i, mean_p = runs[:, 0].mean(), runs[:, 1].mean()
    slowest = runs[:, 2].max()
    ok = mean_i >= 0.85 and mean_p >= 0.85 and slowest < RUN_LIMIT_S
    verdict(7, ok, f"fixture 5 categories x 5 seeds: AUROC_i {mean_i:.4f}, AUROC_p {mean_p:.4f} "
                   f"(need >= 0.85 each), slowest run {slowest:.0f} s")
    assert ok


def test_criterion_08_ablation_direction(verdict, fixture_runs):
    full = fixture_runs("full")[:, 0].mean()
    gauss_only = fixture_runs("gauss", perlin_disc_on=False)[:, 0].mean()
    perlin_only = fixture_runs("perlin", gaussian_disc_on=False)[:, 0].mean()
    no_bands = fixture_runs("no-bands", mfic_on=False)[:, 0].mean()
    ok = full >= max(gauss_only, perlin_only, no_bands)
    verdict(8, ok, f"AUROC_i full {full:.4f} vs Gaussian-only {gauss_only:.4f}, Perlin-only {perlin_only:.4f}, "
                   f"no band split {no_bands:.4f}")
    assert ok


def test_criterion_09_deterministic_training(verdict, tmp_path):
    args = ["train", "--fixture", "stripes", "--seed", "3", "resolution=64", "epochs=2"]
    outputs = []
    for k in range(2):
        assert main(args + ["--runs", str(tmp_path / f"runs{k}")]) == 0
        run = next((tmp_path / f"runs{k}").iterdir())
        outputs.append({name: (run / name).read_bytes() for name in ("model.dfdw", "metrics.txt", "loss.csv")})
    same = {name: outputs[0][name] == outputs[1][name] for name in outputs[0]}
    ok = all(same.values())
    verdict(9, ok, "two identical train runs: " + ", ".join(f"{n} {'identical' if v else 'DIFFER'}"
                                                            for n, v in same.items()))
    assert ok


def test_criterion_10_high_band_energy_gap(verdict):
    energy = {0: [], 1: []}
    hist = {0: [], 1: []}
    for c in CATEGORIES:
        for s in SEEDS:
            for it in make_category(c, s, 64)["test"]:
                energy[it.label].append(high_band_energy(radial_energy(dft2(it.image))))
                hist[it.label].append(gray_histogram(it.image) / it.mask.size)
    normal, defective = np.mean(energy[0]), np.mean(energy[1])
    gap = abs(defective - normal) / normal
    l1 = float(np.abs(np.mean(hist[1], axis=0) - np.mean(hist[0], axis=0)).sum())
    ok = gap > 0.10
    verdict(10, ok, f"high-band energy defective {defective:.1f} vs normal {normal:.1f}: relative gap {gap:.3f} "
                    f"(need > 0.10); gray-histogram L1 {l1:.3f} = {l1 / gap:.2f} x gap (reported)")
    assert ok
