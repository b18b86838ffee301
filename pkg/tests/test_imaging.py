import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpam.imaging import (ImageFormatError, downsample, load_image,
                          pixel_shuffle, pixel_unshuffle, save_image)


def test_save_load_roundtrip_8bit(tmp_path, rng):
    img = rng.random((5, 7, 3)).astype(np.float32)
    # quantize first so the round-trip is exact
    img = np.round(img * 255) / 255
    p = tmp_path / "a.png"
    save_image(img.astype(np.float32), p, bit_depth=8)
    back = load_image(p)
    assert np.array_equal(np.round(back * 255), np.round(img * 255))


def test_load_scales_255_to_one(tmp_path):
    img = np.ones((2, 2, 3), dtype=np.float32)
    p = tmp_path / "w.png"
    save_image(img, p, bit_depth=8)
    assert load_image(p).max() == 1.0


def test_16bit_zero_and_bound(tmp_path, rng):
    img = rng.random((4, 4, 3)).astype(np.float32)
    img[0, 0] = 0.0
    p = tmp_path / "b.png"
    save_image(img, p, bit_depth=16)
    back = load_image(p)
    assert back[0, 0, 0] == 0.0
    assert np.abs(back - img).max() <= 1.0 / 131070 + 1e-9


def test_quantization_round_half_up(tmp_path):
    img = np.full((1, 1, 1), 0.5, dtype=np.float32)
    p = tmp_path / "h.png"
    save_image(img, p, bit_depth=8)
    assert round(float(load_image(p)[0, 0, 0]) * 255) == 128


def test_grayscale_roundtrip(tmp_path):
    img = np.linspace(0, 1, 12, dtype=np.float32).reshape(3, 4, 1)
    img = (np.round(img * 255) / 255).astype(np.float32)
    p = tmp_path / "g.png"
    save_image(img, p, bit_depth=8)
    back = load_image(p)
    assert back.shape == (3, 4, 1)
    assert np.allclose(back, img, atol=1e-9)


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")


def test_load_corrupt_file(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"not a png")
    with pytest.raises(ImageFormatError):
        load_image(p)


def test_downsample_constant(rng):
    img = np.full((8, 8, 3), 0.37, dtype=np.float32)
    out = downsample(img, 4)
    assert out.shape == (2, 2, 3)
    assert np.allclose(out, 0.37)


def test_downsample_block_mean():
    img = np.array([[0.0, 0.0], [1.0, 1.0]], dtype=np.float32)[:, :, None]
    assert np.allclose(downsample(img, 2), 0.5)


def test_downsample_matches_loop_oracle(rng):
    img = rng.random((8, 8, 3)).astype(np.float32)
    out = downsample(img, 2)
    for y in range(4):
        for x in range(4):
            block = img[2 * y:2 * y + 2, 2 * x:2 * x + 2]
            assert np.abs(out[y, x] - block.mean(axis=(0, 1))).max() < 1e-6


def test_downsample_preserves_mean(rng):
    img = rng.random((16, 16, 3)).astype(np.float32)
    assert abs(downsample(img, 4).mean() - img.mean()) < 1e-6


def test_downsample_non_divisible_pads_edges():
    img = np.arange(9, dtype=np.float32).reshape(3, 3, 1) / 9
    out = downsample(img, 2)
    assert out.shape == (2, 2, 1)


def test_downsample_bad_factor(rng):
    with pytest.raises(ValueError):
        downsample(rng.random((4, 4, 1)), 0)


def test_pixel_unshuffle_identity_factor(rng):
    img = rng.random((4, 4, 2)).astype(np.float32)
    assert np.array_equal(pixel_unshuffle(img, 1), img)


def test_pixel_unshuffle_channel_order():
    img = np.arange(16, dtype=np.float32).reshape(4, 4, 1)
    out = pixel_unshuffle(img, 4)
    assert out.shape == (1, 1, 16)
    for k in range(16):
        assert out[0, 0, k] == img[k // 4, k % 4, 0]


def test_pixel_unshuffle_bad_dims(rng):
    with pytest.raises(ValueError):
        pixel_unshuffle(rng.random((5, 4, 1)), 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_shuffle_unshuffle_inverse(f, seed):
    r = np.random.default_rng(seed)
    img = r.random((4 * f, 4 * f, 3)).astype(np.float32)
    back = pixel_shuffle(pixel_unshuffle(img, f), f)
    assert np.array_equal(back, img)


def test_pixel_unshuffle_preserves_values(rng):
    img = rng.random((8, 8, 3)).astype(np.float32)
    out = pixel_unshuffle(img, 2)
    assert out.size == img.size
    assert np.array_equal(np.sort(out.ravel()), np.sort(img.ravel()))
