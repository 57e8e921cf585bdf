"""Static and dynamic Gaussian primitives, object tracks, and the composed
trajectory / velocity / rotation evaluation with adjoints.

Storage is struct-of-arrays: a ``Scene`` holds one array per learnable
attribute.  ``StaticGaussian``, ``DynamicGaussian`` and ``ObjectTrack`` are
lightweight record views used by the per-primitive operations and tests;
the renderer path goes through the vectorised ``gather_renderables`` and
``gather_adjoint``.

A dynamic Gaussian's world position at time tau is
``center_curve(t) + offset_curve(t)`` with ``t = f(tau_hat)`` from its
object's time curve.  The offset lives in world coordinates, so the base
rotation only affects the covariance.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .bezier import BezierCurve, basis, basis_derivative, basis_second_derivative
from .fitting import InsufficientDataError, fit, fit_time_mapping, is_monotone
from .geometry import (
    covariance_3d,
    normalize_quat,
    normalize_quat_adjoint,
    quat_multiply,
    quat_multiply_adjoint,
    yaw_quat,
)
from .sh import num_coeffs
from .sky import SkyCubemap

CHECKPOINT_VERSION = 1
TANGENT_EPS = 1e-6  # metres; below this the xy tangent gives no heading
HEADING_STEP = 1.0 / 64  # parameter step when walking back for a heading
INIT_OPACITY = 0.1
VOXEL = 1e-3  # merge resolution for accumulated object points, metres

PARAM_GROUPS = (
    "static_position",
    "static_rotation",
    "static_log_scale",
    "static_opacity",
    "static_color",
    "dynamic_offset",
    "dynamic_rotation",
    "dynamic_log_scale",
    "dynamic_opacity",
    "dynamic_color",
    "center",
    "time",
    "sky",
)


class ContractError(ValueError):
    """Operation called with inconsistent arguments."""


class CheckpointError(ValueError):
    pass


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    return math.log(p / (1.0 - p))


@dataclass
class StaticGaussian:
    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    color: np.ndarray


@dataclass
class DynamicGaussian:
    offset_curve: BezierCurve
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    color: np.ndarray
    group: int


@dataclass
class ObjectTrack:
    group: int
    center_curve: BezierCurve
    time_curve: BezierCurve
    tau_range: tuple
    monotone: bool = True
    yaw_ref: float = 0.0

    def __post_init__(self):
        lo, hi = (float(v) for v in self.tau_range)
        if not hi > lo:
            raise ContractError(f"track {self.group}: tau_range ({lo}, {hi}) is degenerate")
        self.tau_range = (lo, hi)


# ---------------------------------------------------------------- per-op API


def time_to_bezier(track: ObjectTrack, tau: float) -> tuple[float, float]:
    """Curve parameter and its rate dt/dtau at sequence time ``tau``.

    Outside the observed span the object is frozen at the endpoint, so the
    rate is zero there; it is likewise zero when t itself is clamped.
    """
    lo, hi = track.tau_range
    span = hi - lo
    u = (tau - lo) / span
    vals = track.time_curve.control_points[:, 0]
    n = len(vals) - 1
    frozen = not 0.0 <= u <= 1.0
    u = min(max(u, 0.0), 1.0)
    t = float(basis(n, u) @ vals)
    rate = 0.0 if frozen else float(basis_derivative(n, u) @ vals) / span
    if not 0.0 <= t <= 1.0:
        t, rate = min(max(t, 0.0), 1.0), 0.0
    return t, rate


def _check_group(gaussian: DynamicGaussian, track: ObjectTrack) -> None:
    if gaussian.group != track.group:
        raise ContractError(f"Gaussian belongs to group {gaussian.group}, track is group {track.group}")


def dynamic_position(gaussian: DynamicGaussian, track: ObjectTrack, tau: float) -> np.ndarray:
    _check_group(gaussian, track)
    t, _ = time_to_bezier(track, tau)
    n = track.center_curve.degree
    b = basis(n, t)
    return b @ track.center_curve.control_points + basis(gaussian.offset_curve.degree, t) @ gaussian.offset_curve.control_points


def dynamic_velocity(gaussian: DynamicGaussian, track: ObjectTrack, tau: float) -> np.ndarray:
    _check_group(gaussian, track)
    t, rate = time_to_bezier(track, tau)
    d_center = basis_derivative(track.center_curve.degree, t) @ track.center_curve.control_points
    d_offset = basis_derivative(gaussian.offset_curve.degree, t) @ gaussian.offset_curve.control_points
    return (d_center + d_offset) * rate


def _heading_param(center_cps: np.ndarray, t: float):
    """Parameter at or before ``t`` whose xy tangent is usable, or None."""
    n = len(center_cps) - 1
    k = 0
    while True:
        s = max(t - k * HEADING_STEP, 0.0)
        w = (basis_derivative(n, s) @ center_cps)[:2]
        if np.hypot(w[0], w[1]) >= TANGENT_EPS:
            return s
        if s == 0.0:
            return None
        k += 1


def _reference_yaw(center_cps: np.ndarray, t0: float) -> float:
    """Heading at the first fitted parameter, scanning forward if the
    tangent vanishes there; 0 for a stationary track."""
    n = len(center_cps) - 1
    for s in np.concatenate([[t0], np.arange(t0, 1.0 + 1e-12, HEADING_STEP)]):
        w = (basis_derivative(n, min(s, 1.0)) @ center_cps)[:2]
        if np.hypot(w[0], w[1]) >= TANGENT_EPS:
            return float(np.arctan2(w[1], w[0]))
    return 0.0


def dynamic_rotation(gaussian: DynamicGaussian, track: ObjectTrack, tau: float) -> np.ndarray:
    """Base rotation turned by the change in heading since the first frame.

    The heading is the xy direction of the center curve's tangent.  When the
    tangent vanishes the heading is taken from the nearest earlier
    parameter with a usable tangent; with none, the base rotation is
    returned unchanged.
    """
    _check_group(gaussian, track)
    t, _ = time_to_bezier(track, tau)
    q = normalize_quat(gaussian.rotation)
    s = _heading_param(track.center_curve.control_points, t)
    if s is None:
        return q
    w = basis_derivative(track.center_curve.degree, s) @ track.center_curve.control_points
    yaw = np.arctan2(w[1], w[0]) - track.yaw_ref
    return quat_multiply(yaw_quat(yaw), q)


# ------------------------------------------------------------------- scene


@dataclass
class Scene:
    """All learnable state.  Groups are numbered densely from 1; row g-1 of
    the track arrays belongs to group g."""

    static_position: np.ndarray
    static_rotation: np.ndarray
    static_log_scale: np.ndarray
    static_opacity: np.ndarray
    static_color: np.ndarray
    dynamic_offset: np.ndarray
    dynamic_rotation: np.ndarray
    dynamic_log_scale: np.ndarray
    dynamic_opacity: np.ndarray
    dynamic_color: np.ndarray
    dynamic_group: np.ndarray
    center: np.ndarray
    time: np.ndarray
    tau_range: np.ndarray
    monotone: np.ndarray
    yaw_ref: np.ndarray
    sky: SkyCubemap
    sh_degree: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    # sizes --------------------------------------------------------------
    @property
    def n_static(self) -> int:
        return len(self.static_position)

    @property
    def n_dynamic(self) -> int:
        return len(self.dynamic_offset)

    @property
    def n_groups(self) -> int:
        return len(self.center)

    @property
    def degree(self) -> int:
        return self.center.shape[1] - 1 if self.n_groups else self.dynamic_offset.shape[1] - 1

    def validate(self) -> None:
        k = num_coeffs(self.sh_degree)
        ns, nd, ng = len(self.static_position), len(self.dynamic_offset), len(self.center)
        shapes = {
            "static_position": (ns, 3),
            "static_rotation": (ns, 4),
            "static_log_scale": (ns, 3),
            "static_opacity": (ns,),
            "static_color": (ns, k, 3),
            "dynamic_rotation": (nd, 4),
            "dynamic_log_scale": (nd, 3),
            "dynamic_opacity": (nd,),
            "dynamic_color": (nd, k, 3),
            "dynamic_group": (nd,),
            "tau_range": (ng, 2),
            "monotone": (ng,),
            "yaw_ref": (ng,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ContractError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.dynamic_offset.ndim != 3 or self.dynamic_offset.shape[2] != 3:
            raise ContractError("dynamic_offset must be (N, n+1, 3)")
        if ng and (self.center.ndim != 3 or self.center.shape[1:] != (self.dynamic_offset.shape[1], 3)):
            raise ContractError("center curves must match offset curve degree")
        if self.time.ndim != 2 or len(self.time) != ng:
            raise ContractError("time must be (G, m+1)")
        if nd and (self.dynamic_group.min() < 1 or self.dynamic_group.max() > ng):
            raise ContractError("dynamic Gaussian refers to a missing group")
        if ng and np.any(self.tau_range[:, 1] <= self.tau_range[:, 0]):
            raise ContractError("track tau_range is degenerate")

    # record views ---------------------------------------------------------
    def static(self, i: int) -> StaticGaussian:
        return StaticGaussian(
            self.static_position[i].copy(), self.static_rotation[i].copy(), self.static_log_scale[i].copy(),
            float(self.static_opacity[i]), self.static_color[i].copy(),
        )

    def dynamic(self, i: int) -> DynamicGaussian:
        return DynamicGaussian(
            BezierCurve(self.dynamic_offset[i]), self.dynamic_rotation[i].copy(), self.dynamic_log_scale[i].copy(),
            float(self.dynamic_opacity[i]), self.dynamic_color[i].copy(), int(self.dynamic_group[i]),
        )

    def track(self, g: int) -> ObjectTrack:
        if not 1 <= g <= self.n_groups:
            raise ContractError(f"no track for group {g}")
        return ObjectTrack(
            g, BezierCurve(self.center[g - 1]), BezierCurve(self.time[g - 1][:, None]),
            tuple(self.tau_range[g - 1]), bool(self.monotone[g - 1]), float(self.yaw_ref[g - 1]),
        )

    # parameters -----------------------------------------------------------
    def params(self) -> dict:
        """Learnable arrays by group name (live references)."""
        out = {name: getattr(self, name) for name in PARAM_GROUPS if name != "sky"}
        out["sky"] = self.sky.faces
        return out

    def copy(self) -> "Scene":
        kw = {name: getattr(self, name).copy() for name in _ARRAY_FIELDS}
        return Scene(**kw, sky=self.sky.copy(), sh_degree=self.sh_degree, extra=dict(self.extra))

    def astype(self, dtype) -> "Scene":
        s = self.copy()
        for name in PARAM_GROUPS:
            if name != "sky":
                setattr(s, name, getattr(s, name).astype(dtype))
        s.sky.faces = s.sky.faces.astype(dtype)
        return s

    def keep(self, static_mask, dynamic_mask) -> "Scene":
        """Drop primitives where the masks are False (in place)."""
        for name in _STATIC_FIELDS:
            setattr(self, name, getattr(self, name)[static_mask])
        for name in _DYNAMIC_FIELDS:
            setattr(self, name, getattr(self, name)[dynamic_mask])
        return self


_STATIC_FIELDS = ("static_position", "static_rotation", "static_log_scale", "static_opacity", "static_color")
_DYNAMIC_FIELDS = (
    "dynamic_offset", "dynamic_rotation", "dynamic_log_scale", "dynamic_opacity", "dynamic_color", "dynamic_group",
)
_ARRAY_FIELDS = _STATIC_FIELDS + _DYNAMIC_FIELDS + ("center", "time", "tau_range", "monotone", "yaw_ref")


def empty_scene(sh_degree: int = 0, degree: int = 3, time_degree: int = 3, sky: SkyCubemap | None = None) -> Scene:
    k = num_coeffs(sh_degree)
    return Scene(
        static_position=np.zeros((0, 3)), static_rotation=np.zeros((0, 4)), static_log_scale=np.zeros((0, 3)),
        static_opacity=np.zeros(0), static_color=np.zeros((0, k, 3)),
        dynamic_offset=np.zeros((0, degree + 1, 3)), dynamic_rotation=np.zeros((0, 4)),
        dynamic_log_scale=np.zeros((0, 3)), dynamic_opacity=np.zeros(0), dynamic_color=np.zeros((0, k, 3)),
        dynamic_group=np.zeros(0, dtype=np.int64),
        center=np.zeros((0, degree + 1, 3)), time=np.zeros((0, time_degree + 1)), tau_range=np.zeros((0, 2)),
        monotone=np.zeros(0, dtype=bool), yaw_ref=np.zeros(0),
        sky=sky if sky is not None else SkyCubemap.constant(4), sh_degree=sh_degree,
    )


# -------------------------------------------------------------- gathering


@dataclass
class Renderables:
    """Primitives resolved at one instant, statics first then dynamics."""

    position: np.ndarray
    rotation: np.ndarray  # unit quaternions
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray
    velocity: np.ndarray
    is_dynamic: np.ndarray
    group: np.ndarray

    def __len__(self) -> int:
        return len(self.position)

    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)

    @property
    def covariance(self):
        return covariance_3d(self.rotation, np.exp(self.log_scale))

    def subset(self, mask) -> "Renderables":
        return Renderables(**{k: v[mask] for k, v in self.__dict__.items()})


@dataclass
class GatherCache:
    tau: float
    u: np.ndarray  # clamped normalised time per group
    t: np.ndarray
    rate: np.ndarray
    t_free: np.ndarray  # t depends on the time values (not clamped)
    rate_free: np.ndarray
    heading_t: np.ndarray  # NaN where no usable heading
    base_unit: np.ndarray
    yaw: np.ndarray


def track_times(scene: Scene, tau: float):
    """Per-group (u, t, rate, t_free, rate_free) at sequence time ``tau``."""
    lo, hi = scene.tau_range[:, 0], scene.tau_range[:, 1]
    span = hi - lo
    u_raw = (tau - lo) / span
    inside = (u_raw >= 0.0) & (u_raw <= 1.0)
    u = np.clip(u_raw, 0.0, 1.0)
    m = scene.time.shape[1] - 1
    t_raw = np.einsum("gk,gk->g", basis(m, u), scene.time)
    rate_raw = np.einsum("gk,gk->g", basis_derivative(m, u), scene.time) / span
    t_free = (t_raw >= 0.0) & (t_raw <= 1.0)
    t = np.clip(t_raw, 0.0, 1.0)
    rate_free = inside & t_free
    rate = np.where(rate_free, rate_raw, 0.0)
    return u, t, rate, t_free, rate_free


def gather_renderables(scene: Scene, tau: float) -> tuple[Renderables, GatherCache]:
    """Resolve every primitive at ``tau``.  Output order: statics then
    dynamics, each in storage order."""
    n = scene.degree
    u, t, rate, t_free, rate_free = track_times(scene, tau)
    gi = scene.dynamic_group - 1

    heading_t = np.full(scene.n_groups, np.nan)
    yaw = np.zeros(scene.n_groups)
    for g in range(scene.n_groups):
        s = _heading_param(scene.center[g], float(t[g]))
        if s is not None:
            heading_t[g] = s
            w = basis_derivative(n, s) @ scene.center[g]
            yaw[g] = np.arctan2(w[1], w[0]) - scene.yaw_ref[g]

    td = t[gi]
    b0 = basis(n, td)
    b1 = basis_derivative(n, td)
    center_pos = np.einsum("gk,gkc->gc", basis(n, t), scene.center) if scene.n_groups else np.zeros((0, 3))
    center_vel = np.einsum("gk,gkc->gc", basis_derivative(n, t), scene.center) if scene.n_groups else np.zeros((0, 3))
    dyn_pos = center_pos[gi] + np.einsum("nk,nkc->nc", b0, scene.dynamic_offset)
    dyn_vel = (center_vel[gi] + np.einsum("nk,nkc->nc", b1, scene.dynamic_offset)) * rate[gi][:, None]

    base_unit = normalize_quat(scene.dynamic_rotation) if scene.n_dynamic else np.zeros((0, 4))
    has_heading = ~np.isnan(heading_t)[gi]
    dyn_rot = base_unit.copy()
    if np.any(has_heading):
        dyn_rot[has_heading] = quat_multiply(yaw_quat(yaw[gi][has_heading]), base_unit[has_heading])

    ns = scene.n_static
    static_rot = normalize_quat(scene.static_rotation) if ns else np.zeros((0, 4))
    r = Renderables(
        position=np.concatenate([scene.static_position, dyn_pos]),
        rotation=np.concatenate([static_rot, dyn_rot]),
        log_scale=np.concatenate([scene.static_log_scale, scene.dynamic_log_scale]),
        opacity_logit=np.concatenate([scene.static_opacity, scene.dynamic_opacity]),
        sh=np.concatenate([scene.static_color, scene.dynamic_color]),
        velocity=np.concatenate([np.zeros((ns, 3)), dyn_vel]),
        is_dynamic=np.concatenate([np.zeros(ns, dtype=bool), np.ones(scene.n_dynamic, dtype=bool)]),
        group=np.concatenate([np.zeros(ns, dtype=np.int64), scene.dynamic_group.astype(np.int64)]),
    )
    cache = GatherCache(tau, u, t, rate, t_free, rate_free, heading_t, base_unit, yaw)
    return r, cache


def zero_grads(scene: Scene) -> dict:
    return {name: np.zeros_like(arr, dtype=np.float64) for name, arr in scene.params().items()}


def gather_adjoint(scene: Scene, cache: GatherCache, grads: dict, d_t_extra=None, out: dict | None = None) -> dict:
    """Pull cotangents on renderable fields back to scene parameters.

    ``grads`` may hold 'position', 'rotation', 'log_scale', 'opacity_logit',
    'sh', 'velocity' (each indexed like the renderables).  ``d_t_extra`` is
    an optional per-group cotangent on t (from losses that read t
    directly).  Gradients are accumulated into ``out`` if given.
    """
    out = zero_grads(scene) if out is None else out
    ns, nd, ng = scene.n_static, scene.n_dynamic, scene.n_groups
    n = scene.degree
    m = scene.time.shape[1] - 1
    zero = np.zeros((ns + nd, 3))
    d_pos = grads.get("position", zero)
    d_vel = grads.get("velocity", zero)
    d_rot = grads.get("rotation")
    if "log_scale" in grads:
        out["static_log_scale"] += grads["log_scale"][:ns]
        out["dynamic_log_scale"] += grads["log_scale"][ns:]
    if "opacity_logit" in grads:
        out["static_opacity"] += grads["opacity_logit"][:ns]
        out["dynamic_opacity"] += grads["opacity_logit"][ns:]
    if "sh" in grads:
        out["static_color"] += grads["sh"][:ns]
        out["dynamic_color"] += grads["sh"][ns:]
    out["static_position"] += d_pos[:ns]
    if d_rot is not None and ns:
        out["static_rotation"] += normalize_quat_adjoint(scene.static_rotation, d_rot[:ns])
    if ng == 0:
        return out

    gi = scene.dynamic_group - 1
    td = cache.t[gi]
    rate = cache.rate[gi][:, None]
    b0, b1, b2 = basis(n, td), basis_derivative(n, td), basis_second_derivative(n, td)
    dp, dv = d_pos[ns:], d_vel[ns:]

    # position = gamma(t) + delta(t); velocity = (gamma' + delta') * rate
    d_off = b0[:, :, None] * dp[:, None, :] + b1[:, :, None] * (dv * rate)[:, None, :]
    out["dynamic_offset"] += d_off
    d_center = np.zeros_like(scene.center)
    for k in range(n + 1):
        np.add.at(d_center[:, k, :], gi, b0[:, k, None] * dp + b1[:, k, None] * dv * rate)
    d1_sum = np.einsum("gk,gkc->gc", basis_derivative(n, cache.t), scene.center)[gi] + np.einsum(
        "nk,nkc->nc", b1, scene.dynamic_offset
    )
    d2_sum = np.einsum("gk,gkc->gc", basis_second_derivative(n, cache.t), scene.center)[gi] + np.einsum(
        "nk,nkc->nc", b2, scene.dynamic_offset
    )
    d_t_dyn = np.sum(dp * d1_sum, axis=1) + np.sum(dv * d2_sum, axis=1) * rate[:, 0]
    d_rate_dyn = np.sum(dv * d1_sum, axis=1)
    d_t = np.bincount(gi, weights=d_t_dyn, minlength=ng)
    d_rate = np.bincount(gi, weights=d_rate_dyn, minlength=ng)

    # rotation = yaw_quat(theta) * normalize(q_base) where a heading exists
    if d_rot is not None and nd:
        dr = d_rot[ns:]
        has_heading = ~np.isnan(cache.heading_t)[gi]
        d_unit = dr.copy()
        if np.any(has_heading):
            h = has_heading
            yq = yaw_quat(cache.yaw[gi][h])
            d_yq, d_unit_h = quat_multiply_adjoint(yq, cache.base_unit[h], dr[h])
            d_unit[h] = d_unit_h
            half = 0.5 * cache.yaw[gi][h]
            d_theta_n = 0.5 * (-np.sin(half) * d_yq[:, 0] + np.cos(half) * d_yq[:, 3])
            d_theta = np.bincount(gi[h], weights=d_theta_n, minlength=ng)
            for g in np.flatnonzero(d_theta != 0.0):
                s = cache.heading_t[g]
                w = basis_derivative(n, s) @ scene.center[g]
                w2 = basis_second_derivative(n, s) @ scene.center[g]
                r2 = w[0] ** 2 + w[1] ** 2
                d_w = d_theta[g] * np.array([-w[1], w[0]]) / r2
                d_center[g, :, :2] += basis_derivative(n, s)[:, None] * d_w[None, :]
                # the heading parameter moves one-for-one with t
                d_t[g] += d_w @ w2[:2]
        out["dynamic_rotation"] += normalize_quat_adjoint(scene.dynamic_rotation, d_unit)

    out["center"] += d_center
    if d_t_extra is not None:
        d_t = d_t + d_t_extra
    span = scene.tau_range[:, 1] - scene.tau_range[:, 0]
    d_time = np.where(cache.t_free, d_t, 0.0)[:, None] * basis(m, cache.u)
    d_time += np.where(cache.rate_free, d_rate / span, 0.0)[:, None] * basis_derivative(m, cache.u)
    out["time"] += d_time
    return out


def dynamic_t(scene: Scene, cache: GatherCache) -> np.ndarray:
    """Curve parameter of every dynamic Gaussian for the cached instant."""
    return cache.t[scene.dynamic_group - 1]


# ---------------------------------------------------------- initialisation


def _knn_scale(points: np.ndarray, k: int = 3, default: float = 0.05) -> np.ndarray:
    if len(points) < 2:
        return np.full(len(points), default)
    kk = min(k, len(points) - 1)
    dist, _ = cKDTree(points).query(points, k=kk + 1)
    d = np.mean(dist[:, 1:], axis=1)
    return np.maximum(d, 1e-4)


def _dedupe(points: np.ndarray, colors: np.ndarray):
    keys = np.round(points / VOXEL).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    first = np.sort(first)
    return points[first], colors[first]


def _color_block(colors: np.ndarray, sh_degree: int) -> np.ndarray:
    block = np.zeros((len(colors), num_coeffs(sh_degree), 3))
    block[:, 0, :] = colors
    return block


def init_scene_from_groups(
    objects: dict,
    static_points,
    static_colors=None,
    degree: int = 3,
    time_degree: int = 3,
    sh_degree: int = 0,
    sky: SkyCubemap | None = None,
) -> Scene:
    """Build an initial scene from per-object point groups over time.

    ``objects`` maps group id g (dense from 1) to a sequence of frames
    ``(tau, points)`` or ``(tau, points, colors)``.  Per object the frame
    centers (point means) are fitted with a Bezier curve, the resulting
    parameters define the time mapping, and every distinct object point
    becomes a dynamic Gaussian with a constant offset from its frame's
    center.
    """
    static_points = np.asarray(static_points, dtype=np.float64).reshape(-1, 3)
    if static_colors is None:
        static_colors = np.full((len(static_points), 3), 0.5)
    static_colors = np.asarray(static_colors, dtype=np.float64).reshape(-1, 3)
    groups = sorted(objects)
    if groups != list(range(1, len(groups) + 1)):
        raise ContractError(f"object groups must be dense from 1, got {groups}")

    centers, times, ranges, monos, yaws = [], [], [], [], []
    offsets, off_colors, off_groups = [], [], []
    for g in groups:
        frames = sorted(objects[g], key=lambda f: f[0])
        if len(frames) < degree + 1:
            raise InsufficientDataError(f"group {g}: {len(frames)} frames, need at least {degree + 1}")
        taus = np.array([f[0] for f in frames], dtype=np.float64)
        pts = [np.asarray(f[1], dtype=np.float64).reshape(-1, 3) for f in frames]
        cols = [
            np.asarray(f[2], dtype=np.float64).reshape(-1, 3) if len(f) > 2 else np.full((len(p), 3), 0.5)
            for f, p in zip(frames, pts)
        ]
        frame_centers = np.stack([p.mean(axis=0) for p in pts])
        result = fit(frame_centers, degree)
        tcurve = fit_time_mapping(taus, result.params, time_degree)
        centers.append(result.curve.control_points)
        times.append(tcurve.control_points[:, 0])
        ranges.append((taus[0], taus[-1]))
        monos.append(is_monotone(tcurve))
        t0 = float(np.clip(tcurve.control_points[0, 0], 0.0, 1.0))
        yaws.append(_reference_yaw(result.curve.control_points, t0))
        rel = np.concatenate([p - c for p, c in zip(pts, frame_centers)])
        rel, rel_col = _dedupe(rel, np.concatenate(cols))
        offsets.append(rel)
        off_colors.append(rel_col)
        off_groups.append(np.full(len(rel), g, dtype=np.int64))

    rel = np.concatenate(offsets) if offsets else np.zeros((0, 3))
    nd = len(rel)
    dyn_scale = np.concatenate([_knn_scale(o) for o in offsets]) if offsets else np.zeros(0)
    ns = len(static_points)
    init_logit = logit(INIT_OPACITY)
    ident = np.tile([1.0, 0.0, 0.0, 0.0], (1, 1))
    return Scene(
        static_position=static_points.copy(),
        static_rotation=np.repeat(ident, ns, axis=0),
        static_log_scale=np.repeat(np.log(_knn_scale(static_points))[:, None], 3, axis=1),
        static_opacity=np.full(ns, init_logit),
        static_color=_color_block(static_colors, sh_degree),
        dynamic_offset=np.repeat(rel[:, None, :], degree + 1, axis=1),
        dynamic_rotation=np.repeat(ident, nd, axis=0),
        dynamic_log_scale=np.repeat(np.log(dyn_scale)[:, None], 3, axis=1),
        dynamic_opacity=np.full(nd, init_logit),
        dynamic_color=_color_block(np.concatenate(off_colors) if off_colors else np.zeros((0, 3)), sh_degree),
        dynamic_group=np.concatenate(off_groups) if off_groups else np.zeros(0, dtype=np.int64),
        center=np.array(centers).reshape(-1, degree + 1, 3),
        time=np.array(times).reshape(-1, time_degree + 1),
        tau_range=np.array(ranges, dtype=np.float64).reshape(-1, 2),
        monotone=np.array(monos, dtype=bool),
        yaw_ref=np.array(yaws, dtype=np.float64),
        sky=sky if sky is not None else SkyCubemap.constant(8),
        sh_degree=sh_degree,
    )


# ------------------------------------------------------------- checkpoints


def _tolist(a):
    return np.asarray(a).tolist()


def save_checkpoint(scene: Scene, path: str, extra: dict | None = None) -> None:
    """Write ``path`` (JSON) plus the sky texels next to it as ``<stem>.sky.npy``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    sky_name = os.path.splitext(os.path.basename(path))[0] + ".sky.npy"
    doc = {
        "version": CHECKPOINT_VERSION,
        "sh_degree": scene.sh_degree,
        "degree": scene.dynamic_offset.shape[1] - 1,
        "time_degree": scene.time.shape[1] - 1,
        "statics": {name: _tolist(getattr(scene, name)) for name in _STATIC_FIELDS},
        "dynamics": {name: _tolist(getattr(scene, name)) for name in _DYNAMIC_FIELDS},
        "tracks": {name: _tolist(getattr(scene, name)) for name in ("center", "time", "tau_range", "monotone", "yaw_ref")},
        "sky": {"file": sky_name, "resolution": scene.sky.resolution},
        "extra": extra if extra is not None else scene.extra,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
    with open(os.path.join(directory, sky_name), "wb") as fh:
        np.save(fh, np.asarray(scene.sky.faces, dtype=np.float64))


def load_checkpoint(path: str) -> Scene:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    k = num_coeffs(doc["sh_degree"])
    n1, m1 = doc["degree"] + 1, doc["time_degree"] + 1
    shapes = {
        "static_position": (-1, 3), "static_rotation": (-1, 4), "static_log_scale": (-1, 3), "static_opacity": (-1,),
        "static_color": (-1, k, 3), "dynamic_offset": (-1, n1, 3), "dynamic_rotation": (-1, 4),
        "dynamic_log_scale": (-1, 3), "dynamic_opacity": (-1,), "dynamic_color": (-1, k, 3), "dynamic_group": (-1,),
        "center": (-1, n1, 3), "time": (-1, m1), "tau_range": (-1, 2), "monotone": (-1,), "yaw_ref": (-1,),
    }
    kw = {}
    for section in ("statics", "dynamics", "tracks"):
        for name, values in doc[section].items():
            dtype = np.int64 if name == "dynamic_group" else bool if name == "monotone" else np.float64
            kw[name] = np.array(values, dtype=dtype).reshape(shapes[name])
    sky_path = os.path.join(os.path.dirname(os.path.abspath(path)), doc["sky"]["file"])
    sky = SkyCubemap(np.load(sky_path))
    return Scene(**kw, sky=sky, sh_degree=doc["sh_degree"], extra=doc.get("extra", {}))

