"""Image representation and basic raster operations.

Images are plain numpy arrays of shape (H, W, C), float32 or float64,
values in [0, 1], channel-last interleaved. Grayscale PNGs load as C=1.
"""

import os

import cv2
import numpy as np


class ImageFormatError(ValueError):
    """Unsupported or undecodable image file."""


def check_image(img, name="image"):
    """Validate an (H, W, C) unit-range float array, returning it unchanged."""
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValueError(f"{name}: expected (H, W, C) array, got shape {img.shape}")
    if img.dtype not in (np.float32, np.float64):
        raise ValueError(f"{name}: expected float32/float64 data, got {img.dtype}")
    if not np.isfinite(img).all():
        raise ValueError(f"{name}: non-finite values present")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"{name}: values outside [0, 1]")
    return img


def load_image(path):
    """Load an 8- or 16-bit PNG (grayscale or RGB) into a float32 unit-range array."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"cannot decode {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageFormatError(f"{path}: unsupported bit depth {raw.dtype}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif raw.ndim == 3 and raw.shape[2] == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    else:
        raise ImageFormatError(f"{path}: unsupported channel count {raw.shape}")
    return raw.astype(np.float32) / scale


def save_image(img, path, bit_depth=8):
    """Quantize (round-half-up) and write a PNG decodable by load_image."""
    img = check_image(img)
    if img.shape[2] not in (1, 3):
        raise ValueError(f"save_image: need 1 or 3 channels, got {img.shape[2]}")
    if bit_depth == 8:
        maxval, dtype = 255.0, np.uint8
    elif bit_depth == 16:
        maxval, dtype = 65535.0, np.uint16
    else:
        raise ValueError(f"save_image: bit_depth must be 8 or 16, got {bit_depth}")
    q = np.floor(img.astype(np.float64) * maxval + 0.5).astype(dtype)
    if q.shape[2] == 3:
        q = cv2.cvtColor(q, cv2.COLOR_RGB2BGR)
    else:
        q = q[:, :, 0]
    ok = cv2.imwrite(str(path), q)
    if not ok:
        raise IOError(f"cannot write {path}")


def downsample(img, factor):
    """Area-average downsample by an integer factor.

    Non-divisible dimensions are edge-replicated up to the next multiple
    before averaging.
    """
    if factor <= 0 or int(factor) != factor:
        raise ValueError(f"downsample: factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return img.copy()
    h, w, c = img.shape
    pad_h = (-h) % factor
    pad_w = (-w) % factor
    if pad_h or pad_w:
        img = np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
        h, w = img.shape[:2]
    out = img.reshape(h // factor, factor, w // factor, factor, c)
    return out.mean(axis=(1, 3), dtype=np.float64).astype(img.dtype)


def pixel_unshuffle(feat, factor):
    """Space-to-depth: (H, W, C) -> (H/f, W/f, C*f*f).

    Output channel c*f*f + dy*f + dx holds input channel c at offset
    (dy, dx) inside each f x f block.
    """
    if factor <= 0 or int(factor) != factor:
        raise ValueError(f"pixel_unshuffle: bad factor {factor}")
    factor = int(factor)
    h, w, c = feat.shape
    if h % factor or w % factor:
        raise ValueError(
            f"pixel_unshuffle: dims {h}x{w} not divisible by {factor}")
    f = factor
    x = feat.reshape(h // f, f, w // f, f, c)
    # -> (H/f, W/f, c, dy, dx), then flatten the last three axes
    x = x.transpose(0, 2, 4, 1, 3)
    return np.ascontiguousarray(x.reshape(h // f, w // f, c * f * f))


def pixel_shuffle(feat, factor):
    """Depth-to-space inverse of pixel_unshuffle."""
    factor = int(factor)
    h, w, cf = feat.shape
    f = factor
    if cf % (f * f):
        raise ValueError(f"pixel_shuffle: channels {cf} not divisible by {f * f}")
    c = cf // (f * f)
    x = feat.reshape(h, w, c, f, f)
    x = x.transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(x.reshape(h * f, w * f, c))
