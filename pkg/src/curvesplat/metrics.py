"""Image-quality metrics on unit-range images."""

from __future__ import annotations

import math

import numpy as np

from .losses import ssim

PSNR_SENTINEL = 99.0

__all__ = ["PSNR_SENTINEL", "MetricError", "dyn_psnr", "mean_dyn_psnr", "psnr", "ssim"]


class MetricError(ValueError):
    pass


def psnr(a, b, mask=None) -> float:
    """-10 log10(MSE) over all pixels, or over pixels where ``mask`` is set.

    Identical inputs give the sentinel 99.0 dB instead of infinity.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            raise MetricError("psnr: empty mask")
        sq = sq[m]
    mse = float(np.mean(sq))
    if mse == 0.0:
        return PSNR_SENTINEL
    return -10.0 * math.log10(mse)


def dyn_psnr(a, b, dyn_mask) -> float | None:
    """PSNR inside the dynamic mask; None when the mask is empty."""
    m = np.asarray(dyn_mask, dtype=bool)
    if not m.any():
        return None
    return psnr(a, b, m)


def mean_dyn_psnr(values) -> float | None:
    """Average over frames, skipping frames without dynamic pixels."""
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None
