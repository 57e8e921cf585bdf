"""Training objective terms, each returning ``(value, gradient)``.

Gradients are with respect to the first image-like argument unless noted.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .bezier import basis, basis_derivative

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SKY_LOG_FLOOR = 1e-6


@dataclass
class LossWeights:
    lambda_r: float = 0.2
    lambda_d: float = 1.0
    lambda_o_sky: float = 0.05
    lambda_icc: float = 0.01
    lambda_dr: float = 0.1
    lambda_v: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {k} must be finite and >= 0, got {v}")


@dataclass
class FrameSupervision:
    image: np.ndarray  # H x W x 3
    inv_depth: np.ndarray  # H x W
    depth_valid: np.ndarray  # H x W bool
    sky_mask: np.ndarray  # H x W {0, 1}
    dyn_mask: np.ndarray  # H x W {0, 1}


# ------------------------------------------------------------------ L1


def l1_loss(a, b, mask=None):
    """Mean |a - b| over all elements, or over masked pixels (every channel)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = a - b
    if mask is None:
        return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim < diff.ndim:
        m = np.broadcast_to(m.reshape(m.shape + (1,) * (diff.ndim - m.ndim)), diff.shape)
    count = m.sum()
    if count == 0:
        warnings.warn("l1_loss: empty mask, returning 0", stacklevel=2)
        return 0.0, np.zeros_like(diff)
    return float(np.sum(np.abs(diff) * m) / count), np.sign(diff) * m / count


# ---------------------------------------------------------------- SSIM


@lru_cache(maxsize=32)
def _band(n: int) -> np.ndarray:
    """Valid-mode 1-D Gaussian filter as an (n - 10, n) matrix."""
    x = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    g /= g.sum()
    out = np.zeros((n - SSIM_WINDOW + 1, n))
    for i in range(n - SSIM_WINDOW + 1):
        out[i, i : i + SSIM_WINDOW] = g
    out.setflags(write=False)
    return out


def _filt(x, bh, bw):
    # x: (H, W, C) -> (H', W', C)
    return np.einsum("ih,hwc,jw->ijc", bh, x, bw, optimize=True)


def _filt_t(y, bh, bw):
    return np.einsum("ih,ijc,jw->hwc", bh, y, bw, optimize=True)


def ssim(a, b):
    """Mean SSIM over the valid region and channels (unit dynamic range)."""
    return 1.0 - ssim_loss(a, b)[0]


def ssim_loss(a, b):
    """1 - SSIM and its gradient with respect to ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a, b = a[..., None], b[..., None]
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    bh, bw = _band(h), _band(w)
    mu_a, mu_b = _filt(a, bh, bw), _filt(b, bh, bw)
    saa = _filt(a * a, bh, bw) - mu_a**2
    sbb = _filt(b * b, bh, bw) - mu_b**2
    sab = _filt(a * b, bh, bw) - mu_a * mu_b
    n1 = 2 * mu_a * mu_b + SSIM_C1
    n2 = 2 * sab + SSIM_C2
    d1 = mu_a**2 + mu_b**2 + SSIM_C1
    d2 = saa + sbb + SSIM_C2
    s = (n1 * n2) / (d1 * d2)
    count = s.size
    value = 1.0 - float(s.mean())

    g = -np.ones_like(s) / count  # d loss / d s
    ds_dmu = (2 * mu_b * n2) / (d1 * d2) - s * 2 * mu_a / d1
    ds_dsaa = -s / d2
    ds_dsab = 2 * n1 / (d1 * d2)
    g_mu = g * ds_dmu
    g_saa = g * ds_dsaa
    g_sab = g * ds_dsab
    # saa = filt(a^2) - mu_a^2, sab = filt(ab) - mu_a mu_b
    g_mu_total = g_mu - 2 * mu_a * g_saa - mu_b * g_sab
    grad = _filt_t(g_mu_total, bh, bw) + 2 * a * _filt_t(g_saa, bh, bw) + b * _filt_t(g_sab, bh, bw)
    if squeeze:
        grad = grad[..., 0]
    return value, grad


def photometric_loss(a, b, lambda_r: float):
    """(1 - lambda_r) L1 + lambda_r (1 - SSIM)."""
    l1, g1 = l1_loss(a, b)
    ls, gs = ssim_loss(a, b)
    return (1 - lambda_r) * l1 + lambda_r * ls, (1 - lambda_r) * g1 + lambda_r * gs


# --------------------------------------------------------- depth and sky


def depth_loss(inv_depth, valid, d_render):
    """Mean |D - D_G| over valid pixels; gradient w.r.t. ``d_render``."""
    valid = np.asarray(valid, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        warnings.warn("depth_loss: no valid pixels, returning 0", stacklevel=2)
        return 0.0, np.zeros_like(d_render, dtype=np.float64)
    diff = np.where(valid, d_render - inv_depth, 0.0)
    return float(np.abs(diff).sum() / count), np.sign(diff) / count


def sky_opacity_loss(sky_mask, opacity):
    """-mean over sky pixels of log(max(1 - O, 1e-6)); gradient w.r.t. O."""
    m = np.asarray(sky_mask, dtype=bool)
    count = int(m.sum())
    if count == 0:
        return 0.0, np.zeros_like(opacity, dtype=np.float64)
    one_minus = 1.0 - opacity
    clamped = one_minus < SKY_LOG_FLOOR
    val = -np.log(np.maximum(one_minus, SKY_LOG_FLOOR))
    value = float(val[m].sum() / count)
    grad = np.where(m & ~clamped, 1.0 / np.where(clamped, 1.0, one_minus), 0.0) / count
    return value, grad


# --------------------------------------------------- curve consistency


def inter_curve_consistency(offsets, t):
    """Mean over Gaussians of | |delta(t)| - (|p_0| + |p_n|) / 2 |.

    ``offsets`` is (N, n+1, 3), ``t`` is (N,).  Returns (value, d_offsets,
    d_t).
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    count = len(offsets)
    if count == 0:
        return 0.0, np.zeros_like(offsets), np.zeros_like(t)
    n = offsets.shape[1] - 1
    b0 = basis(n, t)
    b1 = basis_derivative(n, t)
    delta = np.einsum("nk,nkc->nc", b0, offsets)
    d_delta_dt = np.einsum("nk,nkc->nc", b1, offsets)
    r = np.linalg.norm(delta, axis=1)
    n0 = np.linalg.norm(offsets[:, 0], axis=1)
    nn = np.linalg.norm(offsets[:, -1], axis=1)
    e = r - 0.5 * (n0 + nn)
    value = float(np.mean(np.abs(e)))
    s = np.sign(e) / count

    def unit(v, norm):
        return np.where(norm[:, None] > 0, v / np.where(norm > 0, norm, 1.0)[:, None], 0.0)

    u = unit(delta, r)
    d_off = (s[:, None, None] * b0[:, :, None]) * u[:, None, :]
    d_off[:, 0] -= 0.5 * s[:, None] * unit(offsets[:, 0], n0)
    d_off[:, -1] -= 0.5 * s[:, None] * unit(offsets[:, -1], nn)
    d_t = s * np.sum(u * d_delta_dt, axis=1)
    return value, d_off, d_t


# ---------------------------------------------------------- dynamic terms


def dynamic_rendering_loss(gt_image, dyn_mask, dyn_color, dyn_opacity, lambda_r: float):
    """Photometric loss between the masked ground truth and the
    dynamic-only render, plus mean |M - O_dyn|.

    Returns (value, d_color, d_opacity).
    """
    m = np.asarray(dyn_mask, dtype=np.float64)
    target = gt_image * m[..., None]
    photo, d_color = photometric_loss(dyn_color, target, lambda_r)
    mask_l1, d_op = l1_loss(dyn_opacity, m)
    return photo + mask_l1, d_color, d_op


def velocity_loss(velocity, dyn_mask):
    """|V * (1 - M)|_F / (H W); gradient w.r.t. V."""
    m = np.asarray(dyn_mask, dtype=np.float64)
    leak = velocity * (1.0 - m)[..., None]
    hw = m.size
    norm = float(np.sqrt(np.sum(leak * leak)))
    if norm == 0.0:
        return 0.0, np.zeros_like(velocity, dtype=np.float64)
    return norm / hw, leak * (1.0 - m)[..., None] / (norm * hw)


# ------------------------------------------------------------------ total


@dataclass
class LossBreakdown:
    photometric: float
    sky: float
    icc: float
    dynamic: float
    velocity: float
    depth: float
    total: float

    def as_row(self) -> dict:
        return asdict(self)


def total_loss(maps, dyn_maps, sup: FrameSupervision, offsets, t_dyn, weights: LossWeights):
    """Weighted objective for one frame.

    ``maps`` is the full render, ``dyn_maps`` the dynamic-only render.
    Returns (LossBreakdown, cotangents for maps, cotangents for dyn_maps,
    d_offsets, d_t_dyn).
    """
    w = weights
    photo, d_color = photometric_loss(maps.color, sup.image, w.lambda_r)
    l_sky, d_op_sky = sky_opacity_loss(sup.sky_mask, maps.opacity)
    l_icc, d_off, d_t = inter_curve_consistency(offsets, t_dyn)
    l_dr, d_dyn_color, d_dyn_op = dynamic_rendering_loss(sup.image, sup.dyn_mask, dyn_maps.color_g, dyn_maps.opacity, w.lambda_r)
    l_v, d_vel = velocity_loss(dyn_maps.velocity, sup.dyn_mask)
    l_d, d_depth = depth_loss(sup.inv_depth, sup.depth_valid, maps.depth)
    total = photo + w.lambda_o_sky * l_sky + w.lambda_icc * l_icc + w.lambda_dr * l_dr + w.lambda_v * l_v + w.lambda_d * l_d
    cot = {"color": d_color, "opacity": w.lambda_o_sky * d_op_sky, "depth": w.lambda_d * d_depth}
    dyn_cot = {"color_g": w.lambda_dr * d_dyn_color, "opacity": w.lambda_dr * d_dyn_op, "velocity": w.lambda_v * d_vel}
    breakdown = LossBreakdown(photo, l_sky, l_icc, l_dr, l_v, l_d, float(total))
    return breakdown, cot, dyn_cot, w.lambda_icc * d_off, w.lambda_icc * d_t
