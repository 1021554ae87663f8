"""PSNR and SSIM for projections and volumes."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ValidationError

__all__ = ["PSNR_CAP", "psnr", "ssim", "ssim_volume", "data_range_of"]

#: Returned by :func:`psnr` for identical inputs.
PSNR_CAP = 300.0

_WIN = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def data_range_of(reference) -> float:
    """Peak-to-peak of the reference, the normalisation used for both metrics."""
    reference = np.asarray(reference)
    return float(reference.max() - reference.min())


def psnr(a, b, data_range: float) -> float:
    a, b = _same_shape(a, b)
    if not data_range > 0:
        raise ValidationError("data_range must be > 0")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(data_range**2 / mse)))


def _gaussian_window():
    x = np.arange(_WIN) - (_WIN - 1) / 2
    w = np.exp(-(x**2) / (2 * _SIGMA**2))
    return w / w.sum()


def _filter_valid(img, w):
    # Separable Gaussian, cropped to positions where the full window fits.
    out = correlate1d(correlate1d(img, w, axis=0, mode="constant"), w, axis=1, mode="constant")
    h = _WIN // 2
    return out[h:-h, h:-h]


def ssim(a, b, data_range: float) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5), averaged over the valid map."""
    a, b = _same_shape(a, b)
    if a.ndim != 2:
        raise ValidationError("ssim expects 2-D images")
    if min(a.shape) < _WIN:
        raise ValidationError(f"image {a.shape} smaller than the {_WIN}x{_WIN} window")
    if not data_range > 0:
        raise ValidationError("data_range must be > 0")
    w = _gaussian_window()
    c1 = (_K1 * data_range) ** 2
    c2 = (_K2 * data_range) ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a * mu_a
    var_b = _filter_valid(b * b, w) - mu_b * mu_b
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_volume(a, b, data_range: float) -> float:
    """Mean 2-D SSIM over axial slices ``[:, :, k]``."""
    a, b = _same_shape(a, b)
    if a.ndim != 3:
        raise ValidationError("ssim_volume expects 3-D volumes")
    return float(np.mean([ssim(a[:, :, k], b[:, :, k], data_range) for k in range(a.shape[2])]))
