"""Synthetic street sequences with known ground truth.

A scene is a textured ground plane and boxes built from static Gaussians,
plus rigid objects (box-shaped Gaussian clusters) whose centers follow cubic
Bezier trajectories with a monotone speed profile.  A forward-moving camera
observes the scene at a fixed frame rate.  ``generate`` renders every frame
with the reference renderer and writes a dataset directory (see
``dataset``) together with the ground-truth scene.

Annotations imitate detector boxes: the per-frame point groups of each
object are shifted by a smooth, low-frequency error

    e_k = f * span * sqrt(2) * sin(2 pi k / N + phi) * u

where ``span`` is the diagonal of the object's trajectory bounding box,
``u`` a random horizontal direction and ``phi`` a random phase, so the RMS
error over the sequence is ``f * span``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bezier import BezierCurve, evaluate
from .dataset import Dataset, RawFrame
from .imageio import to_u8
from .raster import Camera, render_reference
from .scene import Scene, _reference_yaw, gather_renderables, logit, save_checkpoint
from .sky import SkyCubemap

DYN_MASK_THRESHOLD = 0.5
SKY_MASK_THRESHOLD = 0.01
DEPTH_OPACITY_MIN = 0.95


class SpecError(ValueError):
    pass


@dataclass
class BoxSpec:
    center: list
    size: list
    color: list
    spacing: float = 0.4


@dataclass
class ObjectSpec:
    """``waypoints`` are the control points of the cubic center trajectory;
    ``speed`` the time-curve control values (0 to 1, non-decreasing)."""

    waypoints: list
    size: list = field(default_factory=lambda: [3.6, 1.6, 1.4])
    color: list = field(default_factory=lambda: [0.8, 0.15, 0.1])
    spacing: float = 0.35
    speed: list = field(default_factory=lambda: [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])


@dataclass
class CameraSpec:
    start: list = field(default_factory=lambda: [0.0, 0.0, 1.5])
    velocity: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    heading_deg: float = 90.0  # viewing direction in the ground plane, from +x
    pitch_deg: float = 5.0  # downward tilt
    width: int = 64
    height: int = 48
    focal: float = 48.0


@dataclass
class SyntheticSceneSpec:
    frames: int = 40
    frame_rate: float = 10.0
    ground_x: list = field(default_factory=lambda: [-10.0, 14.0])
    ground_y: list = field(default_factory=lambda: [2.0, 15.0])
    ground_spacing: float = 0.5
    ground_color: list = field(default_factory=lambda: [0.42, 0.42, 0.4])
    boxes: list = field(default_factory=list)
    objects: list = field(default_factory=list)
    camera: CameraSpec = field(default_factory=CameraSpec)
    noise_fraction: float = 0.05
    image_noise: float = 0.0
    depth_fraction: float = 0.05
    scale_factor: float = 0.6  # Gaussian std as a fraction of grid spacing
    opacity: float = 0.9
    color_jitter: float = 0.08
    sky_resolution: int = 8

    def __post_init__(self):
        if isinstance(self.camera, dict):
            self.camera = CameraSpec(**self.camera)
        self.boxes = [b if isinstance(b, BoxSpec) else BoxSpec(**b) for b in self.boxes]
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]

    def validate(self) -> None:
        if self.frames < 8:
            raise SpecError(f"need at least 8 frames, got {self.frames}")
        if not self.frame_rate > 0:
            raise SpecError("frame_rate must be positive")
        for name in ("ground_x", "ground_y"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise SpecError(f"{name} must have positive extent")
        positive = [("ground_spacing", self.ground_spacing), ("scale_factor", self.scale_factor)]
        positive += [(f"boxes[{i}].spacing", b.spacing) for i, b in enumerate(self.boxes)]
        positive += [(f"boxes[{i}].size", min(b.size)) for i, b in enumerate(self.boxes)]
        positive += [(f"objects[{i}].spacing", o.spacing) for i, o in enumerate(self.objects)]
        positive += [(f"objects[{i}].size", min(o.size)) for i, o in enumerate(self.objects)]
        for name, v in positive:
            if not v > 0:
                raise SpecError(f"{name} must be positive")
        for i, o in enumerate(self.objects):
            if np.shape(o.waypoints) != (4, 3):
                raise SpecError(f"objects[{i}].waypoints must be 4 control points in 3-D")
            s = np.asarray(o.speed, dtype=np.float64)
            if s.shape != (4,) or np.any(np.diff(s) < 0) or s[0] != 0.0 or s[-1] != 1.0:
                raise SpecError(f"objects[{i}].speed must be 4 non-decreasing values from 0 to 1")
        if not 0.0 < self.opacity < 1.0:
            raise SpecError("opacity must lie in (0, 1)")
        if not 0.0 <= self.depth_fraction <= 1.0:
            raise SpecError("depth_fraction must lie in [0, 1]")
        if self.noise_fraction < 0 or self.image_noise < 0:
            raise SpecError("noise levels must be >= 0")
        c = self.camera
        if c.width < 1 or c.height < 1 or not c.focal > 0:
            raise SpecError("camera intrinsics must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSceneSpec":
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise SpecError(f"invalid scene spec: {exc}") from None
        spec.validate()
        return spec


def load_spec(path: str) -> SyntheticSceneSpec:
    with open(path) as fh:
        try:
            return SyntheticSceneSpec.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON ({exc})") from None


def demo_spec(**overrides) -> SyntheticSceneSpec:
    """The bundled street scene: two cars crossing in front of a building,
    both in view for the whole sequence."""
    d = dict(
        boxes=[
            BoxSpec([0.0, 15.5, 1.5], [24.0, 1.0, 3.0], [0.62, 0.55, 0.48], 0.6),
            BoxSpec([-4.5, 11.5, 1.0], [2.0, 2.0, 2.0], [0.25, 0.45, 0.3], 0.45),
            BoxSpec([9.0, 12.0, 1.5], [2.0, 2.0, 3.0], [0.3, 0.35, 0.6], 0.5),
        ],
        objects=[
            ObjectSpec(
                [[-5.0, 6.0, 0.85], [-1.0, 6.2, 0.85], [3.0, 5.6, 0.85], [7.0, 5.8, 0.85]],
                color=[0.8, 0.15, 0.1], speed=[0.0, 0.2, 0.6, 1.0],
            ),
            ObjectSpec(
                [[6.0, 9.0, 0.85], [3.5, 9.4, 0.85], [1.0, 8.4, 0.85], [-1.5, 8.8, 0.85]],
                color=[0.15, 0.3, 0.85], speed=[0.0, 0.4, 0.75, 1.0],
            ),
        ],
    )
    d.update(overrides)
    spec = SyntheticSceneSpec(**d)
    spec.validate()
    return spec


# ------------------------------------------------------------- geometry


def _grid(lo, hi, spacing):
    n = max(int(round((hi - lo) / spacing)), 0) + 1
    return np.linspace(lo, hi, n) if n > 1 else np.array([(lo + hi) / 2])


def box_surface(size, spacing, bottom=False) -> np.ndarray:
    """Points on the faces of an axis-aligned box centred at the origin."""
    half = np.asarray(size, dtype=np.float64) / 2
    axes = [_grid(-h, h, spacing) for h in half]
    pts = []
    for a in range(3):
        b, c = [k for k in range(3) if k != a]
        gb, gc = np.meshgrid(axes[b], axes[c], indexing="ij")
        for sign in (-1.0, 1.0):
            if a == 2 and sign < 0 and not bottom:
                continue
            p = np.zeros((gb.size, 3))
            p[:, a] = sign * half[a]
            p[:, b], p[:, c] = gb.ravel(), gc.ravel()
            pts.append(p)
    pts = np.concatenate(pts)
    # edges are shared between faces
    _, first = np.unique(np.round(pts / (spacing * 1e-3)).astype(np.int64), axis=0, return_index=True)
    return pts[np.sort(first)]


def _shade(points, size, base, rng, jitter):
    """Face-dependent shading plus per-point jitter."""
    half = np.asarray(size) / 2
    rel = np.abs(points) / np.maximum(half, 1e-9)
    face = np.argmax(rel, axis=1)
    light = np.array([0.85, 0.75, 1.1])[face]
    col = np.asarray(base)[None, :] * light[:, None] + rng.uniform(-jitter, jitter, (len(points), 3))
    return np.clip(col, 0.02, 0.98)


def gt_sky(resolution: int) -> SkyCubemap:
    """A smooth horizon-to-zenith gradient."""
    r = resolution
    c = (np.arange(r) + 0.5) / r * 2 - 1
    u, v = np.meshgrid(c, c)  # u along columns, v along rows
    one = np.ones_like(u)
    dirs = [
        np.stack([one, -v, -u], -1), np.stack([-one, -v, u], -1),
        np.stack([u, one, v], -1), np.stack([u, -one, -v], -1),
        np.stack([u, -v, one], -1), np.stack([-u, -v, -one], -1),
    ]
    faces = []
    horizon = np.array([0.86, 0.9, 0.97])
    zenith = np.array([0.3, 0.5, 0.88])
    for d in dirs:
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        s = np.sqrt(np.clip(d[..., 2], 0.0, 1.0))[..., None]
        faces.append(horizon * (1 - s) + zenith * s)
    return SkyCubemap(np.stack(faces))


def frame_times(spec: SyntheticSceneSpec) -> np.ndarray:
    return np.arange(spec.frames) / spec.frame_rate


def cameras(spec: SyntheticSceneSpec) -> list:
    c = spec.camera
    head, pitch = math.radians(c.heading_deg), math.radians(c.pitch_deg)
    fwd = np.array([math.cos(head) * math.cos(pitch), math.sin(head) * math.cos(pitch), -math.sin(pitch)])
    out = []
    for tau in frame_times(spec):
        eye = np.asarray(c.start, dtype=np.float64) + tau * np.asarray(c.velocity, dtype=np.float64)
        out.append(Camera.look_at(eye, eye + fwd, [0.0, 0.0, 1.0], c.focal, c.focal, c.width, c.height, float(tau)))
    return out


def _static_layout(spec, rng):
    pts, cols, spacing = [], [], []
    gx = _grid(*spec.ground_x, spec.ground_spacing)
    gy = _grid(*spec.ground_y, spec.ground_spacing)
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    ground = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1)
    # painted stripes give the ground some texture
    stripe = 0.12 * np.sign(np.sin(1.3 * ground[:, 0]) * np.sin(0.9 * ground[:, 1]))
    gcol = np.asarray(spec.ground_color)[None, :] * (1 + stripe[:, None])
    gcol += rng.uniform(-spec.color_jitter, spec.color_jitter, gcol.shape)
    pts.append(ground)
    cols.append(np.clip(gcol, 0.02, 0.98))
    spacing.append(np.full(len(ground), spec.ground_spacing))
    for b in spec.boxes:
        local = box_surface(b.size, b.spacing)
        pts.append(local + np.asarray(b.center))
        cols.append(_shade(local, b.size, b.color, rng, spec.color_jitter))
        spacing.append(np.full(len(local), b.spacing))
    return np.concatenate(pts), np.concatenate(cols), np.concatenate(spacing)


def _quat_identity(n):
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    return q


def build_scene(spec: SyntheticSceneSpec, rng) -> Scene:
    """The ground-truth scene (degree-3 center and time curves)."""
    spec.validate()
    s_pos, s_col, s_sp = _static_layout(spec, rng)
    offs, cols, sps, groups = [], [], [], []
    centers, times, yaws = [], [], []
    for g, o in enumerate(spec.objects, start=1):
        # the object center is the centroid of its Gaussians, which is what a
        # point-group annotation measures; the open bottom lifts it
        surface = box_surface(o.size, o.spacing)
        centroid = surface.mean(axis=0)
        local = surface - centroid
        offs.append(local)
        cols.append(_shade(surface, o.size, o.color, rng, spec.color_jitter))
        sps.append(np.full(len(local), o.spacing))
        groups.append(np.full(len(local), g, dtype=np.int64))
        cps = np.asarray(o.waypoints, dtype=np.float64) + centroid
        centers.append(cps)
        times.append(np.asarray(o.speed, dtype=np.float64))
        yaws.append(_reference_yaw(cps, 0.0))
    nd = sum(len(x) for x in offs)
    off = np.concatenate(offs) if offs else np.zeros((0, 3))
    d_sp = np.concatenate(sps) if sps else np.zeros(0)
    taus = frame_times(spec)
    op = logit(spec.opacity)
    scene = Scene(
        static_position=s_pos,
        static_rotation=_quat_identity(len(s_pos)),
        static_log_scale=np.repeat(np.log(spec.scale_factor * s_sp)[:, None], 3, axis=1),
        static_opacity=np.full(len(s_pos), op),
        static_color=s_col[:, None, :].copy(),
        dynamic_offset=np.repeat(off[:, None, :], 4, axis=1),
        dynamic_rotation=_quat_identity(nd),
        dynamic_log_scale=np.repeat(np.log(spec.scale_factor * d_sp)[:, None], 3, axis=1),
        dynamic_opacity=np.full(nd, op),
        dynamic_color=(np.concatenate(cols) if cols else np.zeros((0, 3)))[:, None, :].copy(),
        dynamic_group=np.concatenate(groups) if groups else np.zeros(0, dtype=np.int64),
        center=np.array(centers).reshape(-1, 4, 3),
        time=np.array(times).reshape(-1, 4),
        tau_range=np.tile([taus[0], taus[-1]], (len(spec.objects), 1)).astype(np.float64),
        monotone=np.ones(len(spec.objects), dtype=bool),
        yaw_ref=np.array(yaws, dtype=np.float64),
        sky=gt_sky(spec.sky_resolution),
        sh_degree=0,
    )
    scene.validate()
    return scene


def center_positions(scene: Scene, taus) -> np.ndarray:
    """(G, len(taus), 3) object centers at the given timestamps."""
    from .scene import track_times

    out = np.zeros((scene.n_groups, len(taus), 3))
    for k, tau in enumerate(taus):
        t = track_times(scene, float(tau))[1]
        for g in range(scene.n_groups):
            out[g, k] = evaluate(BezierCurve(scene.center[g]), float(t[g]))
    return out


def trajectory_span(points: np.ndarray) -> float:
    """Diagonal of the axis-aligned bounding box of a trajectory."""
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0))) if len(points) else 0.0


def annotation_errors(spec: SyntheticSceneSpec, spans, rng) -> np.ndarray:
    """(G, N, 3) smooth per-frame center errors with RMS ``f * span``."""
    n = spec.frames
    k = np.arange(n)
    out = np.zeros((len(spans), n, 3))
    for g, span in enumerate(spans):
        theta = rng.uniform(0, 2 * np.pi)
        phi = rng.uniform(0, 2 * np.pi)
        u = np.array([math.cos(theta), math.sin(theta), 0.0])
        amp = spec.noise_fraction * span * math.sqrt(2.0)
        out[g] = amp * np.sin(2 * np.pi * k / n + phi)[:, None] * u
    return out


def render_frame(scene: Scene, camera: Camera, spec: SyntheticSceneSpec, rng):
    prims, _ = gather_renderables(scene, camera.tau)
    full = render_reference(prims, camera, scene.sky, "all")
    dyn = render_reference(prims, camera, scene.sky, "dynamic")
    image = full.color
    if spec.image_noise > 0:
        image = image + rng.normal(0.0, spec.image_noise, image.shape)
    h, w = camera.height, camera.width
    picked = rng.random((h, w)) < spec.depth_fraction
    valid = picked & (full.opacity >= DEPTH_OPACITY_MIN)
    inv_depth = np.where(valid, full.depth, 0.0).astype(np.float32)
    return RawFrame(
        tau=float(camera.tau), camera=camera, image=to_u8(image), inv_depth=inv_depth, depth_valid=valid,
        sky_mask=full.opacity < SKY_MASK_THRESHOLD, dyn_mask=dyn.opacity > DYN_MASK_THRESHOLD,
    )


def synthesize(spec: SyntheticSceneSpec, seed: int = 0):
    """Build the ground truth and all frames in memory.

    Returns (Dataset without a gt path, ground-truth Scene).
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    scene = build_scene(spec, rng)
    taus = frame_times(spec)
    cams = cameras(spec)
    frames = [render_frame(scene, cam, spec, rng) for cam in cams]

    true_centers = center_positions(scene, taus)
    spans = [trajectory_span(c) for c in true_centers]
    errors = annotation_errors(spec, spans, rng)
    static_cols = scene.static_color[:, 0, :]
    objects = {}
    for g in range(1, scene.n_groups + 1):
        sel = scene.dynamic_group == g
        off = scene.dynamic_offset[sel, 0]
        col = scene.dynamic_color[sel, 0]
        rows = []
        for k in range(spec.frames):
            pts = true_centers[g - 1, k] + off + errors[g - 1, k]
            block = np.column_stack([np.full(len(pts), k), np.full(len(pts), taus[k]), pts, col])
            rows.append(block)
        objects[g] = np.concatenate(rows)
    meta = {
        "spec": spec.to_dict(),
        "seed": int(seed),
        "thresholds": {"dyn_mask_opacity": DYN_MASK_THRESHOLD, "sky_mask_opacity": SKY_MASK_THRESHOLD,
                       "depth_min_opacity": DEPTH_OPACITY_MIN},
        "object_spans": spans,
        "extent": max(spans) if spans else 1.0,
        "annotation_rms": [float(np.sqrt(np.mean(np.sum(e * e, axis=1)))) for e in errors],
    }
    ds = Dataset(frames, scene.static_position, static_cols, objects, meta)
    return ds, scene


def generate(spec: SyntheticSceneSpec, out_dir: str, seed: int = 0) -> Dataset:
    """Write the dataset and the ground-truth checkpoint to ``out_dir``."""
    import os

    try:
        os.makedirs(os.path.join(out_dir, "gt"), exist_ok=True)
    except OSError as exc:
        raise SpecError(f"cannot create {out_dir}: {exc.strerror}") from None
    ds, scene = synthesize(spec, seed)
    gt_path = os.path.join(out_dir, "gt", "checkpoint.json")
    save_checkpoint(scene, gt_path)
    ds.gt_scene_path = gt_path
    ds.root = out_dir
    ds.save(out_dir)
    return ds
