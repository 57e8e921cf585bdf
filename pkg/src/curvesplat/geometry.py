"""Quaternion and covariance helpers with hand-written adjoints.

Quaternions are stored (w, x, y, z).  All functions are vectorised over a
leading batch axis.
"""

from __future__ import annotations

import numpy as np


def normalize_quat(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def normalize_quat_adjoint(q, d_unit):
    """Pull a cotangent on q/|q| back to q."""
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    u = q / norm
    return (d_unit - u * np.sum(u * d_unit, axis=-1, keepdims=True)) / norm


def quat_multiply(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_multiply_adjoint(a, b, d_out):
    """Cotangents on ``a`` and ``b`` for ``quat_multiply(a, b)``."""
    # the product is bilinear: out = L(a) b = R(b) a
    gw, gx, gy, gz = np.moveaxis(d_out, -1, 0)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    da = np.stack(
        [
            gw * bw + gx * bx + gy * by + gz * bz,
            -gw * bx + gx * bw - gy * bz + gz * by,
            -gw * by + gx * bz + gy * bw - gz * bx,
            -gw * bz - gx * by + gy * bx + gz * bw,
        ],
        axis=-1,
    )
    db = np.stack(
        [
            gw * aw + gx * ax + gy * ay + gz * az,
            -gw * ax + gx * aw + gy * az - gz * ay,
            -gw * ay - gx * az + gy * aw + gz * ax,
            -gw * az + gx * ay - gy * ax + gz * aw,
        ],
        axis=-1,
    )
    return da, db


def yaw_quat(theta):
    """Rotation by ``theta`` about +z."""
    theta = np.asarray(theta, dtype=np.float64)
    z = np.zeros_like(theta)
    return np.stack([np.cos(0.5 * theta), z, z, np.sin(0.5 * theta)], axis=-1)


def quat_to_rotmat(q):
    """Rotation matrix of a unit quaternion (not renormalised here)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    r = np.empty(np.shape(w) + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def quat_to_rotmat_adjoint(q, d_r):
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    g = d_r
    dw = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0] - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1])
    dx = 2 * (
        y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0] - 2 * x * g[..., 1, 1] - w * g[..., 1, 2]
        + z * g[..., 2, 0] + w * g[..., 2, 1] - 2 * x * g[..., 2, 2]
    )
    dy = 2 * (
        -2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2] + x * g[..., 1, 0] + z * g[..., 1, 2]
        - w * g[..., 2, 0] + z * g[..., 2, 1] - 2 * y * g[..., 2, 2]
    )
    dz = 2 * (
        -2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2] + w * g[..., 1, 0] - 2 * z * g[..., 1, 1]
        + y * g[..., 1, 2] + x * g[..., 2, 0] + y * g[..., 2, 1]
    )
    return np.stack([dw, dx, dy, dz], axis=-1)


def covariance_3d(q, s):
    """Sigma = R diag(s)^2 R^T for unit quaternion(s) ``q`` and scales ``s``."""
    r = quat_to_rotmat(q)
    m = r * np.asarray(s, dtype=np.float64)[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def covariance_3d_adjoint(q, s, d_cov):
    """Cotangents on (q, s) given a cotangent on Sigma."""
    r = quat_to_rotmat(q)
    s = np.asarray(s, dtype=np.float64)
    m = r * s[..., None, :]
    d_m = (d_cov + np.swapaxes(d_cov, -1, -2)) @ m
    d_s = np.sum(d_m * r, axis=-2)
    d_r = d_m * s[..., None, :]
    return quat_to_rotmat_adjoint(q, d_r), d_s
