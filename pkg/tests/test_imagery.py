import numpy as np
import pytest
from PIL import Image

from dfd.errors import DecodeError
from dfd.imagery import (
    destandardize,
    foreground_mask,
    load_image,
    load_mask,
    resize,
    save_image,
    save_mask,
    standardize,
    to_grayscale,
    to_uint8,
)


def bilinear_by_hand(img, h, w):
    H, W = img.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            y = min(max((i + 0.5) * H / h - 0.5, 0), H - 1)
            x = min(max((j + 0.5) * W / w - 0.5, 0), W - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, H - 1), min(x0 + 1, W - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
                         + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
    return out


@pytest.mark.parametrize("src,dst", [((4, 4), (8, 8)), ((8, 6), (3, 5)), ((5, 7), (16, 2))])
def test_resize_matches_hand_bilinear(src, dst):
    img = np.random.default_rng(0).uniform(0, 1, src)
    np.testing.assert_allclose(resize(img, *dst), bilinear_by_hand(img, *dst), atol=1e-12)


def test_resize_colour_acts_per_channel():
    img = np.random.default_rng(1).uniform(0, 1, (6, 6, 3))
    out = resize(img, 9, 4)
    for c in range(3):
        np.testing.assert_allclose(out[..., c], bilinear_by_hand(img[..., c], 9, 4), atol=1e-12)


def test_resize_identity_and_errors():
    img = np.random.default_rng(2).uniform(0, 1, (5, 5))
    np.testing.assert_array_equal(resize(img, 5, 5), img)
    with pytest.raises(ValueError):
        resize(img, 0, 3)


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(3).uniform(0, 1, (7, 9, 3))
    save_image(tmp_path / "a.png", img)
    back = load_image(tmp_path / "a.png")
    np.testing.assert_array_equal(to_uint8(back), to_uint8(img))
    gray = load_image(tmp_path / "a.png", gray=True)
    assert gray.shape == (7, 9)


def test_mask_round_trip_png_and_pgm(tmp_path):
    m = (np.random.default_rng(4).uniform(size=(6, 6)) > 0.5).astype(np.uint8)
    for name in ("m.png", "m.pgm"):
        save_mask(tmp_path / name, m)
        np.testing.assert_array_equal(load_mask(tmp_path / name), m)


def test_ppm_is_accepted(tmp_path):
    Image.fromarray(np.full((3, 3, 3), 255, np.uint8)).save(tmp_path / "a.ppm")
    np.testing.assert_array_equal(load_image(tmp_path / "a.ppm"), 1.0)


def test_decode_errors(tmp_path):
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(DecodeError):
        load_image(tmp_path / "junk.png")
    Image.fromarray(np.zeros((3, 3), np.uint8)).save(tmp_path / "a.bmp")
    with pytest.raises(DecodeError):
        load_image(tmp_path / "a.bmp")
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.png")


def test_standardize_round_trip_and_gray():
    img = np.random.default_rng(5).uniform(0, 1, (4, 4, 3))
    np.testing.assert_allclose(destandardize(standardize(img)), img, atol=1e-12)
    assert to_grayscale(np.ones((2, 2, 3)))[0, 0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        to_grayscale(np.ones((2, 2, 4)))


def test_foreground_is_the_object_not_the_background():
    yy, xx = np.mgrid[0:32, 0:32]
    disc = (np.hypot(yy - 16, xx - 16) < 8).astype(float)
    for fg, bg in ((0.9, 0.1), (0.1, 0.9)):
        img = np.repeat((bg + (fg - bg) * disc)[..., None], 3, axis=-1)
        np.testing.assert_array_equal(foreground_mask(img), disc.astype(np.uint8))


def test_constant_image_is_all_foreground():
    np.testing.assert_array_equal(foreground_mask(np.full((5, 5, 3), 0.4)), 1)
