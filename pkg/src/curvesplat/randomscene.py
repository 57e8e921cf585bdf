"""Random scenes and frames for gradient checks and oracle comparisons."""

from __future__ import annotations

import numpy as np

from .dataset import Frame
from .losses import FrameSupervision
from .raster import Camera
from .scene import Scene, _reference_yaw
from .sh import num_coeffs
from .sky import SkyCubemap


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_scene(rng, n_static=8, per_object=6, n_objects=2, sh_degree=1, degree=3, sky_res=4) -> Scene:
    """Well-visible anisotropic Gaussians in front of ``small_camera``."""
    k = num_coeffs(sh_degree)
    nd = per_object * n_objects
    centers, times, yaws = [], [], []
    for _ in range(n_objects):
        start = rng.uniform([-1.0, -0.5, 0.0], [-0.3, 0.5, 1.0])
        end = start + rng.uniform([0.8, -0.4, -0.2], [1.6, 0.4, 0.2])
        s = np.linspace(0, 1, degree + 1)[:, None]
        cps = start + s * (end - start) + rng.normal(scale=0.1, size=(degree + 1, 3))
        centers.append(cps)
        inner = np.sort(rng.uniform(0.15, 0.85, 2))
        times.append(np.array([0.02, inner[0], inner[1], 0.97]))
        yaws.append(_reference_yaw(cps, 0.02))
    offsets = rng.normal(scale=0.25, size=(nd, 1, 3)) + rng.normal(scale=0.05, size=(nd, degree + 1, 3))
    scene = Scene(
        static_position=rng.uniform([-1.5, -1.0, -0.5], [1.5, 1.0, 1.5], size=(n_static, 3)),
        static_rotation=random_quats(rng, n_static),
        static_log_scale=np.log(rng.uniform(0.15, 0.45, size=(n_static, 3))),
        static_opacity=rng.uniform(-1.0, 1.5, n_static),
        static_color=rng.uniform(0.1, 0.9, size=(n_static, k, 3)) * np.r_[1.0, np.full(k - 1, 0.3)][None, :, None],
        dynamic_offset=offsets,
        dynamic_rotation=random_quats(rng, nd),
        dynamic_log_scale=np.log(rng.uniform(0.1, 0.35, size=(nd, 3))),
        dynamic_opacity=rng.uniform(-1.0, 1.5, nd),
        dynamic_color=rng.uniform(0.1, 0.9, size=(nd, k, 3)) * np.r_[1.0, np.full(k - 1, 0.3)][None, :, None],
        dynamic_group=np.repeat(np.arange(1, n_objects + 1), per_object),
        center=np.array(centers).reshape(-1, degree + 1, 3),
        time=np.array(times).reshape(-1, 4),
        tau_range=np.tile([0.0, 1.0], (n_objects, 1)),
        monotone=np.ones(n_objects, dtype=bool),
        yaw_ref=np.array(yaws, dtype=np.float64),
        sky=SkyCubemap(rng.uniform(0.2, 0.8, size=(6, sky_res, sky_res, 3))),
        sh_degree=sh_degree,
    )
    scene.validate()
    return scene


def small_camera(size=16, tau=0.45) -> Camera:
    return Camera.look_at([0.3, -5.0, 0.8], [0.0, 0.0, 0.5], [0.0, 0.0, 1.0], size * 1.1, size * 1.1, size, size, tau)


def random_frame(rng, camera: Camera, index=0) -> Frame:
    h, w = camera.height, camera.width
    sup = FrameSupervision(
        image=rng.uniform(0, 1, (h, w, 3)),
        inv_depth=rng.uniform(0.05, 0.3, (h, w)),
        depth_valid=rng.random((h, w)) < 0.3,
        sky_mask=(rng.random((h, w)) < 0.3).astype(np.float64),
        dyn_mask=(rng.random((h, w)) < 0.3).astype(np.float64),
    )
    return Frame(index, camera, sup)


def random_primitives(rng, n, sh_coeffs=1, depth=(3.0, 8.0), spread=2.0):
    """Resolved primitives in front of a camera at the origin looking down +z."""
    from .geometry import normalize_quat
    from .scene import Renderables

    return Renderables(
        position=rng.uniform([-spread, -spread, depth[0]], [spread, spread, depth[1]], (n, 3)),
        rotation=normalize_quat(rng.normal(size=(n, 4))),
        log_scale=np.log(rng.uniform(0.05, 0.4, (n, 3))),
        opacity_logit=rng.normal(0.0, 1.5, n),
        sh=rng.uniform(0.0, 1.0, (n, sh_coeffs, 3)),
        velocity=rng.normal(size=(n, 3)),
        is_dynamic=rng.uniform(size=n) < 0.5,
        group=np.zeros(n, dtype=np.int64),
    )


def axis_camera(size=64, focal=None, tau=0.0) -> Camera:
    """Camera at the origin looking down +z with image y pointing down."""
    f = focal or size * 0.95
    return Camera.look_at([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0], f, f, size, size, tau)
