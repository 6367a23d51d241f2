import numpy as np
import pytest

from dfd.config import TrainConfig
from dfd.errors import ConfigError, DecodeError
from dfd.imagery import resize
from dfd.fixture import CATEGORIES, DEFECTS, make_category
from dfd.pipeline import (
    ModelBundle,
    band_features,
    build_training_set,
    combine,
    heat_overlay,
    load_score_map,
    minmax,
    params_hash,
    raw_scores,
    read_manifest,
    run_manifest,
    save_score_map,
    score_image,
    score_images,
    train,
    verify_checkpoint,
)

SMALL = dict(resolution=32, N=4, epochs=2, batch=4, vit_dim=16, vit_heads=2)


@pytest.fixture(scope="module")
def data():
    return make_category("disc", seed=0, size=32, n_train=2, n_good=3, n_defect=3)


@pytest.fixture(scope="module")
def model(data):
    return train(data["train"], TrainConfig(seed=1, **SMALL))


def test_band_features_shape():
    imgs = np.random.default_rng(0).uniform(size=(3, 32, 32, 3))
    f = band_features(imgs, TrainConfig(resolution=32))
    assert f.shape == (3, 2, 4, 4, 192) and f.dtype == np.float32
    assert band_features(imgs, TrainConfig(resolution=32, mfic_on=False)).shape == (3, 1, 4, 4, 192)


def test_training_set_layout(data):
    cfg = TrainConfig(seed=0, **SMALL)
    ts = build_training_set(data["train"], cfg)
    assert ts.normal.shape == (8, 2, 4, 4, 192)
    assert ts.pooled.shape == (8, 4, 4)
    np.testing.assert_array_equal(ts.tau, ts.pooled.reshape(8, -1).max(1))
    clean = ts.tau == 0
    np.testing.assert_array_equal(ts.normal[clean], ts.anomalous[clean])


def test_training_is_deterministic(data, model):
    again = train(data["train"], TrainConfig(seed=1, **SMALL))
    assert params_hash(again) == params_hash(model)
    other = train(data["train"], TrainConfig(seed=2, **SMALL))
    assert params_hash(other) != params_hash(model)


def test_loss_log_and_steps(data, model, tmp_path):
    assert len(model.loss_rows) == 2 * 2  # 8 samples / batch 4, two epochs
    train(data["train"], TrainConfig(seed=1, **SMALL), tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,sim,gau,pix,cls,per,total" and len(lines) == 5


def test_zero_epochs_returns_initial_model(data):
    m = train(data["train"], TrainConfig(epochs=0, **{k: v for k, v in SMALL.items() if k != "epochs"}))
    np.testing.assert_array_equal(m.adaptor.data, np.eye(192))
    with pytest.raises(ValueError):
        train([], TrainConfig(**SMALL))


def test_single_path_models_have_only_their_parameters(data):
    g = train(data["train"], TrainConfig(perlin_disc_on=False, **SMALL))
    assert g.perlin == {} and g.gauss
    S, a = score_image(data["test"][0].image, g)
    assert S.shape == (32, 32)


def test_scores_are_maps_in_unit_range(data, model):
    imgs = [it.image for it in data["test"]]
    maps, s_a = score_images(imgs, model)
    assert len(maps) == 6 and s_a.shape == (6,)
    for S, a in zip(maps, s_a):
        assert S.shape == (32, 32) and 0 <= S.min() and S.max() <= 1 and a == S.max()
    per_image, _ = score_images(imgs, model, scope="image")
    for img, S in zip(imgs, per_image):
        raw = raw_scores(img, model)
        own = np.mean([minmax(r) for r in raw.values()], axis=0)
        np.testing.assert_allclose(S, resize(own, 32, 32), atol=1e-6)


def test_minmax_and_combine():
    np.testing.assert_array_equal(minmax(np.full((2, 2), 3.0)), 0.0)
    np.testing.assert_allclose(minmax(np.array([1.0, 2.0, 3.0])), [0, 0.5, 1])
    np.testing.assert_allclose(minmax(np.array([5.0]), 0.0, 4.0), [1.0])
    raw = {"gau": np.array([[0.0, 2.0], [0.0, 0.0]]), "per": np.array([[0.0, 0.0], [0.0, 4.0]])}
    S, a = combine(raw, (2, 2))
    np.testing.assert_allclose(S, [[0, 0.5], [0, 0.5]])
    assert a == 0.5
    S, _ = combine(raw, (4, 4))
    assert S.shape == (4, 4)


def test_checkpoint_round_trip(model, tmp_path):
    digest = model.save(tmp_path)
    back = ModelBundle.load(tmp_path)
    assert back.cfg == model.cfg and params_hash(back) == params_hash(model)
    img = np.random.default_rng(0).uniform(size=(32, 32, 3))
    np.testing.assert_array_equal(score_image(img, back)[0], score_image(img, model)[0])
    manifest = run_manifest(model.cfg, {"auroc_i": 0.5}, tmp_path / "manifest.txt", tmp_path / "model.dfdw")
    meta, cfg, metrics = read_manifest(manifest)
    assert meta["checkpoint_sha256"] == digest and cfg == model.cfg and metrics["auroc_i"] == 0.5
    assert verify_checkpoint(manifest, tmp_path / "model.dfdw")
    (tmp_path / "model.dfdw").write_bytes(b"DFDW\x01")
    assert not verify_checkpoint(manifest, tmp_path / "model.dfdw")
    with pytest.raises(DecodeError):
        ModelBundle.load(tmp_path)
    with pytest.raises(ConfigError):
        verify_checkpoint(run_manifest(model.cfg, {}, tmp_path / "bare.txt"), tmp_path / "model.dfdw")


def test_score_map_files(tmp_path):
    S = np.random.default_rng(1).uniform(size=(5, 7)).astype(np.float32)
    save_score_map(tmp_path / "a.dfds", S)
    np.testing.assert_array_equal(load_score_map(tmp_path / "a.dfds"), S)
    (tmp_path / "b.dfds").write_bytes(b"XXXX")
    with pytest.raises(DecodeError):
        load_score_map(tmp_path / "b.dfds")
    assert heat_overlay(np.zeros((5, 7, 3)), S).shape == (5, 7, 3)


@pytest.mark.parametrize("category", CATEGORIES)
def test_fixture_categories(category):
    d = make_category(category, seed=3, size=64)
    assert len(d["train"]) == 8 and len(d["test"]) == 22
    defects = [it for it in d["test"] if it.label]
    assert {it.defect for it in defects} == set(DEFECTS)
    for it in d["test"]:
        assert it.image.shape == (64, 64, 3) and 0 <= it.image.min() and it.image.max() <= 1
        assert bool(it.mask.any()) == bool(it.label)
    again = make_category(category, seed=3, size=64)
    np.testing.assert_array_equal(d["test"][-1].image, again["test"][-1].image)
