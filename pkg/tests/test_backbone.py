import numpy as np
import pytest

from dfd import autodiff as ad
from dfd.backbone import (
    Backbone,
    BackboneSpec,
    adapt,
    aggregation_size,
    conv3x3,
    extract,
    extract_bands,
    init_adaptor,
    maxpool3x3,
    random_trunk,
)
from dfd.autodiff import weights as dfdw
from dfd.errors import ConfigError


def conv_by_loops(x, w, stride):
    """Reflect-padded 3x3 convolution as an explicit sum."""
    B, H, W, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="reflect")
    oh, ow = (H - 1) // stride + 1, (W - 1) // stride + 1
    out = np.zeros((B, oh, ow, w.shape[-1]))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, i * stride:i * stride + 3, j * stride:j * stride + 3, :]
            out[:, i, j] = np.einsum("bhwc,chwo->bo", patch, w)
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_loops(stride):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 7, 6, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    np.testing.assert_allclose(conv3x3(x, w, stride), conv_by_loops(x, w, stride), atol=1e-10)


def test_maxpool_matches_loops():
    x = np.random.default_rng(1).normal(size=(1, 6, 5, 2))
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    out = maxpool3x3(x, 2)
    for i in range(out.shape[1]):
        for j in range(out.shape[2]):
            np.testing.assert_array_equal(out[0, i, j], xp[0, 2 * i:2 * i + 3, 2 * j:2 * j + 3].max(axis=(0, 1)))


def test_aggregation_size_scales_with_image():
    assert [aggregation_size(3, s) for s in (64, 128, 256, 512)] == [1, 3, 3, 5]
    assert aggregation_size(1, 256) == 1


def test_feature_shape_and_stride():
    img = np.random.default_rng(2).normal(size=(64, 48, 3))
    f = extract(img)
    assert f.shape == (8, 6, 192) and f.dtype == np.float32
    assert extract(np.stack([img, img])).shape == (2, 8, 6, 192)


def test_bands_and_determinism():
    img = np.random.default_rng(3).uniform(size=(32, 32, 3))
    spec = BackboneSpec()
    b = extract_bands(img, spec)
    assert b.shape == (2, 4, 4, 192)
    assert extract_bands(img, spec, mfic_on=False).shape == (1, 4, 4, 192)
    np.testing.assert_array_equal(b, extract_bands(img, spec))
    assert Backbone(spec).weights_hash() == Backbone(BackboneSpec()).weights_hash()
    assert Backbone(spec).weights_hash() != Backbone(BackboneSpec(seed=1)).weights_hash()


def test_weights_are_frozen():
    bb = Backbone(BackboneSpec())
    with pytest.raises(ValueError):
        bb.weights["conv1"][0, 0, 0, 0] = 1.0


def test_imported_backbone(tmp_path):
    path = tmp_path / "bb.dfdw"
    dfdw.save(path, random_trunk(7))
    spec = BackboneSpec(kind="imported", weights=str(path))
    img = np.random.default_rng(4).normal(size=(16, 16, 3))
    np.testing.assert_array_equal(Backbone(spec)(img), Backbone(BackboneSpec(seed=7))(img))
    dfdw.save(tmp_path / "bad.dfdw", {"conv1": np.zeros((1, 1), np.float32)})
    with pytest.raises(ConfigError):
        Backbone(BackboneSpec(kind="imported", weights=str(tmp_path / "bad.dfdw")))
    with pytest.raises(ConfigError):
        BackboneSpec(kind="imported")
    with pytest.raises(ConfigError):
        BackboneSpec(taps=(4,))


def test_adaptor_starts_as_identity_and_is_differentiable():
    p = np.random.default_rng(5).normal(size=(2, 3, 3, 8))
    W = init_adaptor(8, np.float64)
    np.testing.assert_allclose(adapt(p, W).data, p)
    rep = ad.grad_check(lambda w: (adapt(p, w) ** 2).sum(), W.data + 0.1)
    assert rep.max_rel_error < 1e-6
    with pytest.raises(ValueError):
        adapt(np.ones((2, 7)), W)


def test_adaptor_is_w_times_p():
    rng = np.random.default_rng(6)
    W = rng.normal(size=(4, 4))
    p = rng.normal(size=(4,))
    np.testing.assert_allclose(adapt(p[None], ad.Tensor(W)).data[0], W @ p)


def test_adaptor_is_linear_and_scales():
    rng = np.random.default_rng(7)
    W = ad.Tensor(rng.normal(size=(6, 6)))
    p1, p2 = rng.normal(size=(2, 2, 2, 6))
    lhs = adapt(2.0 * p1 - 3.0 * p2, W).data
    np.testing.assert_allclose(lhs, 2.0 * adapt(p1, W).data - 3.0 * adapt(p2, W).data, atol=1e-10)
    np.testing.assert_allclose(adapt(p1, ad.Tensor(2 * np.eye(6))).data, 2 * p1)


def test_extraction_leaves_weights_untouched():
    bb = Backbone(BackboneSpec())
    before = bb.weights_hash()
    bb(np.random.default_rng(8).normal(size=(2, 32, 32, 3)))
    assert bb.weights_hash() == before


def test_constant_image_gives_constant_interior_features():
    f = extract(np.full((64, 64, 3), 0.3))
    interior = f[1:-1, 1:-1]
    np.testing.assert_allclose(interior, np.broadcast_to(interior[:1, :1], interior.shape), rtol=1e-5, atol=1e-6)
