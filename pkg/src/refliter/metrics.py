"""PSNR and SSIM on [0, 1] images with a leading channel axis."""
import math

import numpy as np

from .autodiff import ArgumentError, DimensionError, Tensor

PSNR_CAP = 100.0
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _arr(x):
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _pair(a, b, op):
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} differ")
    return a, b


def psnr(a, b):
    """``10 log10(1 / MSE)``; identical images give the 100 dB cap."""
    a, b = _pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def ssim_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return g


def _filter_valid(img, g):
    # separable 'valid' correlation over the last two axes
    k = len(g)
    h, w = img.shape[-2:]
    rows = sum(g[i] * img[..., i:h - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[..., :, j:w - k + 1 + j] for j in range(k))


def ssim_map(a, b):
    a, b = _pair(a, b, "ssim")
    if a.ndim < 2 or a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ArgumentError(f"ssim: images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {list(a.shape)}")
    g = ssim_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(a, b):
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels.

    Leading axes are treated as channels (and batch); the window runs over
    the last two. Only fully-contained windows are scored.
    """
    m = ssim_map(a, b)
    per_channel = m.reshape(-1, m.shape[-2] * m.shape[-1]).mean(axis=1)
    return float(per_channel.mean())
