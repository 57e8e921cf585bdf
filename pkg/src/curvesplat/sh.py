"""Real spherical-harmonic colour, degrees 0-3.

Coefficient row 0 is the plain RGB colour; rows for bands >= 1 are added
on top, weighted by the standard real SH polynomials of the unit view
direction.  With degree 0 the colour is view independent and equals row 0.
"""

from __future__ import annotations

import numpy as np

MAX_SH_DEGREE = 3

_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def num_coeffs(degree: int) -> int:
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_SH_DEGREE}], got {degree}")
    return (degree + 1) ** 2


def degree_of(n_coeffs: int) -> int:
    d = int(round(np.sqrt(n_coeffs))) - 1
    if (d + 1) ** 2 != n_coeffs:
        raise ValueError(f"{n_coeffs} is not a valid SH coefficient count")
    return d


def sh_basis(degree: int, d):
    """Basis values (..., K) and their Jacobian w.r.t. the unit direction (..., K, 3)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    k = num_coeffs(degree)
    val = np.zeros(d.shape[:-1] + (k,))
    jac = np.zeros(d.shape[:-1] + (k, 3))
    val[..., 0] = 1.0
    if degree >= 1:
        val[..., 1] = -_C1 * y
        val[..., 2] = _C1 * z
        val[..., 3] = -_C1 * x
        jac[..., 1, 1] = -_C1
        jac[..., 2, 2] = _C1
        jac[..., 3, 0] = -_C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        val[..., 4] = _C2[0] * x * y
        val[..., 5] = _C2[1] * y * z
        val[..., 6] = _C2[2] * (2 * zz - xx - yy)
        val[..., 7] = _C2[3] * x * z
        val[..., 8] = _C2[4] * (xx - yy)
        jac[..., 4, 0], jac[..., 4, 1] = _C2[0] * y, _C2[0] * x
        jac[..., 5, 1], jac[..., 5, 2] = _C2[1] * z, _C2[1] * y
        jac[..., 6, 0], jac[..., 6, 1], jac[..., 6, 2] = -2 * _C2[2] * x, -2 * _C2[2] * y, 4 * _C2[2] * z
        jac[..., 7, 0], jac[..., 7, 2] = _C2[3] * z, _C2[3] * x
        jac[..., 8, 0], jac[..., 8, 1] = 2 * _C2[4] * x, -2 * _C2[4] * y
    if degree >= 3:
        val[..., 9] = _C3[0] * y * (3 * xx - yy)
        val[..., 10] = _C3[1] * x * y * z
        val[..., 11] = _C3[2] * y * (4 * zz - xx - yy)
        val[..., 12] = _C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        val[..., 13] = _C3[4] * x * (4 * zz - xx - yy)
        val[..., 14] = _C3[5] * z * (xx - yy)
        val[..., 15] = _C3[6] * x * (xx - 3 * yy)
        jac[..., 9, 0], jac[..., 9, 1] = _C3[0] * 6 * x * y, _C3[0] * (3 * xx - 3 * yy)
        jac[..., 10, 0], jac[..., 10, 1], jac[..., 10, 2] = _C3[1] * y * z, _C3[1] * x * z, _C3[1] * x * y
        jac[..., 11, 0] = -2 * _C3[2] * x * y
        jac[..., 11, 1] = _C3[2] * (4 * zz - xx - 3 * yy)
        jac[..., 11, 2] = 8 * _C3[2] * y * z
        jac[..., 12, 0] = -6 * _C3[3] * x * z
        jac[..., 12, 1] = -6 * _C3[3] * y * z
        jac[..., 12, 2] = _C3[3] * (6 * zz - 3 * xx - 3 * yy)
        jac[..., 13, 0] = _C3[4] * (4 * zz - 3 * xx - yy)
        jac[..., 13, 1] = -2 * _C3[4] * x * y
        jac[..., 13, 2] = 8 * _C3[4] * x * z
        jac[..., 14, 0], jac[..., 14, 1], jac[..., 14, 2] = 2 * _C3[5] * x * z, -2 * _C3[5] * y * z, _C3[5] * (xx - yy)
        jac[..., 15, 0], jac[..., 15, 1] = _C3[6] * (3 * xx - 3 * yy), -6 * _C3[6] * x * y
    return val, jac


def eval_sh(coeffs, positions, cam_center):
    """Colour of each primitive seen from ``cam_center``.

    ``coeffs`` is (N, K, 3).  Returns (colors (N, 3), cache) where cache is
    what ``eval_sh_adjoint`` needs.
    """
    coeffs = np.asarray(coeffs)
    degree = degree_of(coeffs.shape[1])
    if degree == 0:
        return coeffs[:, 0, :].copy(), (degree, None, None, None)
    rel = positions - cam_center
    norm = np.linalg.norm(rel, axis=-1, keepdims=True)
    d = rel / np.maximum(norm, 1e-12)
    val, jac = sh_basis(degree, d)
    return np.einsum("nk,nkc->nc", val, coeffs), (degree, d, norm, (val, jac))


def eval_sh_adjoint(coeffs, cache, d_color):
    """Cotangents on (coeffs, positions) for ``eval_sh``."""
    degree, d, norm, basis_vals = cache
    if degree == 0:
        d_coeffs = np.zeros(coeffs.shape)
        d_coeffs[:, 0, :] = d_color
        return d_coeffs, None
    val, jac = basis_vals
    d_coeffs = val[:, :, None] * d_color[:, None, :]
    d_val = np.einsum("nkc,nc->nk", coeffs, d_color)
    d_dir = np.einsum("nk,nkj->nj", d_val, jac)
    # through d = rel / |rel|
    d_rel = (d_dir - d * np.sum(d * d_dir, axis=-1, keepdims=True)) / np.maximum(norm, 1e-12)
    return d_coeffs, d_rel
