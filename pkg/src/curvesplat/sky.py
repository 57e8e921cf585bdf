"""Trainable sky cube map with bilinear lookup and its scatter adjoint."""

from __future__ import annotations

import numpy as np

FACE_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z")


class SkyError(ValueError):
    pass


class SkyCubemap:
    """Six R x R RGB faces, texel values in [0, 1].

    Face ``k`` is looked up with in-face coordinates (u, v) in [-1, 1]; u
    runs along columns and v along rows.  Texel centres sit at
    ``(u + 1) / 2 * R - 0.5``.  Filtering is bilinear inside a face and
    clamps at face borders (no cross-face filtering).
    """

    def __init__(self, faces):
        faces = np.array(faces, dtype=np.float64)
        if faces.ndim != 4 or faces.shape[0] != 6 or faces.shape[1] != faces.shape[2] or faces.shape[3] != 3:
            raise SkyError(f"cube map faces must be (6, R, R, 3), got {faces.shape}")
        self.faces = faces

    @classmethod
    def constant(cls, resolution: int, color=(0.5, 0.5, 0.5)) -> "SkyCubemap":
        if resolution < 1:
            raise SkyError("cube map resolution must be >= 1")
        faces = np.empty((6, resolution, resolution, 3))
        faces[:] = np.asarray(color, dtype=np.float64)
        return cls(faces)

    @property
    def resolution(self) -> int:
        return self.faces.shape[1]

    def copy(self) -> "SkyCubemap":
        return SkyCubemap(self.faces.copy())

    def clamp_(self) -> None:
        np.clip(self.faces, 0.0, 1.0, out=self.faces)


def _face_coords(dirs):
    ax = np.abs(dirs)
    major = np.argmax(ax, axis=-1)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    face = np.empty(dirs.shape[:-1], dtype=np.int64)
    u = np.empty(dirs.shape[:-1])
    v = np.empty(dirs.shape[:-1])
    for axis, (pos_face, neg_face) in enumerate(((0, 1), (2, 3), (4, 5))):
        sel = major == axis
        comp = dirs[..., axis]
        pos = sel & (comp >= 0)
        neg = sel & (comp < 0)
        face[pos], face[neg] = pos_face, neg_face
        m = ax[..., axis]
        if axis == 0:
            u[pos], v[pos] = -z[pos] / m[pos], -y[pos] / m[pos]
            u[neg], v[neg] = z[neg] / m[neg], -y[neg] / m[neg]
        elif axis == 1:
            u[pos], v[pos] = x[pos] / m[pos], z[pos] / m[pos]
            u[neg], v[neg] = x[neg] / m[neg], -z[neg] / m[neg]
        else:
            u[pos], v[pos] = x[pos] / m[pos], -y[pos] / m[pos]
            u[neg], v[neg] = -x[neg] / m[neg], -y[neg] / m[neg]
    return face, u, v


def _bilinear_setup(sky: SkyCubemap, dirs):
    dirs = np.asarray(dirs, dtype=np.float64)
    if np.any(np.all(dirs == 0.0, axis=-1)):
        raise SkyError("cube map lookup needs a nonzero direction")
    face, u, v = _face_coords(dirs)
    r = sky.resolution
    su = np.clip((u + 1.0) * 0.5 * r - 0.5, 0.0, r - 1.0)
    sv = np.clip((v + 1.0) * 0.5 * r - 0.5, 0.0, r - 1.0)
    c0 = np.minimum(np.floor(su).astype(np.int64), max(r - 2, 0))
    r0 = np.minimum(np.floor(sv).astype(np.int64), max(r - 2, 0))
    fu = su - c0
    fv = sv - r0
    c1 = np.minimum(c0 + 1, r - 1)
    r1 = np.minimum(r0 + 1, r - 1)
    corners = ((r0, c0, (1 - fv) * (1 - fu)), (r0, c1, (1 - fv) * fu), (r1, c0, fv * (1 - fu)), (r1, c1, fv * fu))
    return face, corners


def sample_directions(sky: SkyCubemap, dirs):
    """RGB for an array of directions (..., 3); magnitude is ignored."""
    face, corners = _bilinear_setup(sky, dirs)
    out = np.zeros(np.shape(face) + (3,))
    for rr, cc, w in corners:
        out += w[..., None] * sky.faces[face, rr, cc]
    return out


def sample_directions_adjoint(sky: SkyCubemap, dirs, d_rgb) -> np.ndarray:
    """Scatter a cotangent on sampled colours into the texel grid."""
    face, corners = _bilinear_setup(sky, dirs)
    grad = np.zeros_like(sky.faces)
    r = sky.resolution
    flat = grad.reshape(-1, 3)
    d_rgb = np.asarray(d_rgb, dtype=np.float64).reshape(-1, 3)
    f = face.reshape(-1)
    for rr, cc, w in corners:
        idx = (f * r + rr.reshape(-1)) * r + cc.reshape(-1)
        # bincount sums duplicates in index order, so the result is deterministic
        for ch in range(3):
            flat[:, ch] += np.bincount(idx, weights=w.reshape(-1) * d_rgb[:, ch], minlength=flat.shape[0])
    return grad


def sample_cubemap(sky: SkyCubemap, direction) -> np.ndarray:
    """RGB seen along a single direction."""
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    return sample_directions(sky, d)[0]
