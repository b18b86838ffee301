"""Evaluation metrics: PSNR, SSIM, and mean CIE76 delta-E.

Inputs are unit-range channel-last images. PSNR of identical images is
capped at 99.0 dB so reports stay finite. delta_e interprets 3-channel
images as sRGB (D65) and measures Euclidean distance in CIELAB.
"""

import math
from dataclasses import dataclass

import numpy as np

from .optim import ssim_map

PSNR_CAP = 99.0

# sRGB (D65) -> XYZ, IEC 61966-2-1
_RGB2XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE = np.array([0.95047, 1.0, 1.08883])


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    delta_e: float

    def as_dict(self):
        return {"psnr": self.psnr, "ssim": self.ssim, "delta_e": self.delta_e}


def psnr(a, b):
    """10*log10(1/MSE) on unit range; 99.0 dB cap for identical images."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def ssim_metric(a, b):
    """Mean SSIM over valid 11x11 Gaussian windows; 1 - ssim_loss exactly."""
    return float(ssim_map(a, b).mean())


def srgb_to_lab(img):
    """(H, W, 3) unit-range sRGB -> CIELAB."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"need an (H, W, 3) sRGB image, got {img.shape}")
    linear = np.where(img <= 0.04045, img / 12.92,
                      ((img + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB2XYZ.T / _WHITE
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def delta_e(a, b):
    """Mean CIE76 color difference between two sRGB images."""
    la, lb = srgb_to_lab(a), srgb_to_lab(b)
    return float(np.mean(np.linalg.norm(la - lb, axis=-1)))


def report(a, b):
    return MetricReport(psnr(a, b), ssim_metric(a, b), delta_e(a, b))
