"""Full-reference image quality metrics (peak value 1.0).

Images are ``(H, W, C)`` arrays, optionally with leading batch axes.  SSIM
uses uniform ``window x window`` windows at stride 1; the per-window map is
averaged over all windows, channels and batch entries.
"""
from dataclasses import dataclass
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, WindowTooLarge

PSNR_CAP = 300.0
SSIM_WINDOW = 8
C1 = 0.01 ** 2
C2 = 0.03 ** 2


@dataclass
class MetricReport:
    psnr: float
    ssim: float


def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr_from_mse(mse):
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB; identical images give ``PSNR_CAP``."""
    a, b = _check_pair(a, b)
    return psnr_from_mse(float(np.mean((a - b) ** 2)))


def _box(x, window):
    return sliding_window_view(x, (window, window), axis=(-3, -2)).mean(axis=(-2, -1))


def _box_transpose(g, window, shape):
    """Adjoint of ``_box``: spread each window's gradient over its pixels."""
    out = np.zeros(shape)
    hh, ww = g.shape[-3], g.shape[-2]
    g = g / (window * window)
    for i in range(window):
        for j in range(window):
            out[..., i:i + hh, j:j + ww, :] += g
    return out


def _ssim_terms(a, b, window):
    if a.ndim < 3:
        raise ShapeError(f"expected (..., H, W, C) images, got {a.shape}")
    h, w = a.shape[-3], a.shape[-2]
    if min(h, w) < window:
        raise WindowTooLarge(f"window {window} exceeds image size {h}x{w}")
    mu_a = _box(a, window)
    mu_b = _box(b, window)
    e_aa = _box(a * a, window)
    e_bb = _box(b * b, window)
    e_ab = _box(a * b, window)
    num1 = 2.0 * (mu_a * mu_b) + C1
    num2 = 2.0 * (e_ab - mu_a * mu_b) + C2
    den1 = mu_a * mu_a + mu_b * mu_b + C1
    den2 = (e_aa - mu_a * mu_a) + (e_bb - mu_b * mu_b) + C2
    return mu_a, mu_b, num1, num2, den1, den2


def ssim(a, b, window=SSIM_WINDOW):
    a, b = _check_pair(a, b)
    _, _, num1, num2, den1, den2 = _ssim_terms(a, b, window)
    return float(np.mean((num1 * num2) / (den1 * den2)))


def ssim_and_grad(a, b, window=SSIM_WINDOW):
    """SSIM and its gradient with respect to the second image ``b``."""
    a, b = _check_pair(a, b)
    mu_a, mu_b, num1, num2, den1, den2 = _ssim_terms(a, b, window)
    den = den1 * den2
    smap = (num1 * num2) / den
    g = 1.0 / smap.size
    d_num1 = g * num2 / den
    d_num2 = g * num1 / den
    d_den1 = -g * smap / den1
    d_den2 = -g * smap / den2
    d_mu_b = 2.0 * mu_a * (d_num1 - d_num2) + 2.0 * mu_b * (d_den1 - d_den2)
    d_e_ab = 2.0 * d_num2
    d_e_bb = d_den2
    grad = (
        _box_transpose(d_mu_b, window, b.shape)
        + a * _box_transpose(d_e_ab, window, b.shape)
        + 2.0 * b * _box_transpose(d_e_bb, window, b.shape)
    )
    return float(np.mean(smap)), grad


def evaluate(a, b, window=SSIM_WINDOW):
    """PSNR and SSIM of ``b`` against reference ``a``.

    The SSIM window shrinks to the smallest image side for tiny images.
    """
    a, b = _check_pair(a, b)
    win = min(window, a.shape[-3], a.shape[-2])
    return MetricReport(psnr(a, b), ssim(a, b, win))
