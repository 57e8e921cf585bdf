"""Tile-based Gaussian splatting with an analytic reverse pass.

Every primitive contributes an 8-vector of features per pixel, blended
front to back: RGB colour, inverse view depth, a constant 1 (accumulated
opacity) and velocity.  Sky is composited behind the blended colour using
the pixel's world ray.

Pixel (row i, column j) has its centre at image coordinates (j + 0.5,
i + 0.5); the camera frame is x right, y down, z forward.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import covariance_3d, covariance_3d_adjoint
from .scene import Renderables, sigmoid
from .sh import eval_sh, eval_sh_adjoint
from .sky import SkyCubemap, sample_directions, sample_directions_adjoint

NEAR = 0.2
DILATION = 0.3
ALPHA_MAX = 0.99
TILE = 16
N_FEAT = 8  # rgb, inverse depth, opacity, velocity xyz
SUBSETS = ("all", "dynamic", "static")


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray
    width: int
    height: int
    tau: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width, self.height = int(self.width), int(self.height)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def pixel_grid(self):
        """(u, v) image coordinates of every pixel centre, each (H, W)."""
        u, v = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        return u, v

    def ray_directions(self) -> np.ndarray:
        """Unnormalised world-space ray directions, (H, W, 3)."""
        u, v = self.pixel_grid()
        d_cam = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        return d_cam @ self.rotation

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "width": self.width, "height": self.height, "tau": self.tau,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), np.array(d["rotation"]),
            np.array(d["translation"]), int(d["width"]), int(d["height"]), float(d.get("tau", 0.0)),
        )

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, tau=0.0, cx=None, cy=None) -> "Camera":
        eye, target, up = (np.asarray(a, dtype=np.float64) for a in (eye, target, up))
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        return cls(
            fx, fy, width / 2.0 if cx is None else cx, height / 2.0 if cy is None else cy,
            rot, -rot @ eye, width, height, tau,
        )


@dataclass
class RenderSettings:
    alpha_min: float = 1.0 / 255.0
    t_min: float = 1e-4
    tile: int = TILE
    threads: int = 1

    @classmethod
    def exact(cls, threads: int = 1) -> "RenderSettings":
        """Thresholds disabled, as used for oracle comparisons."""
        return cls(alpha_min=0.0, t_min=0.0, threads=threads)


@dataclass
class RenderMaps:
    color_g: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    velocity: np.ndarray
    color: np.ndarray
    sky_rgb: np.ndarray | None = None
    state: object = field(default=None, repr=False)


# --------------------------------------------------------------- projection


def project(position, covariance, camera: Camera):
    """EWA projection of one Gaussian.

    Returns ``(center, cov2d, view_depth)`` or ``None`` when culled (behind
    the near plane, or its 3-sigma ellipse misses the image).
    """
    p = _project_arrays(np.asarray(position, dtype=np.float64)[None], np.asarray(covariance)[None], camera)
    if not p["valid"][0]:
        return None
    a, b, c = p["cov2d"][0]
    xi, r = p["xi"][0], 3.0 * math.sqrt(_lambda_max(a, b, c))
    if xi[0] + r < 0 or xi[0] - r > camera.width or xi[1] + r < 0 or xi[1] - r > camera.height:
        return None
    return xi, np.array([[a, b], [b, c]]), float(p["pc"][0, 2])


def _lambda_max(a, b, c):
    return 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)


def _project_arrays(pos, cov3, camera: Camera):
    w = camera.rotation
    pc = pos @ w.T + camera.translation
    z = pc[:, 2]
    valid = z > NEAR
    zs = np.where(valid, z, 1.0)
    x, y = pc[:, 0], pc[:, 1]
    jac = np.zeros((len(pos), 2, 3))
    jac[:, 0, 0] = camera.fx / zs
    jac[:, 0, 2] = -camera.fx * x / zs**2
    jac[:, 1, 1] = camera.fy / zs
    jac[:, 1, 2] = -camera.fy * y / zs**2
    m = w @ cov3 @ w.T
    s2 = jac @ m @ np.swapaxes(jac, 1, 2)
    a = s2[:, 0, 0] + DILATION
    b = s2[:, 0, 1]
    c = s2[:, 1, 1] + DILATION
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    xi = np.stack([camera.fx * x / zs + camera.cx, camera.fy * y / zs + camera.cy], axis=1)
    return {
        "pc": pc, "z": zs, "valid": valid, "jac": jac, "m": m, "cov2d": np.stack([a, b, c], axis=1),
        "conic": conic, "xi": xi,
    }


# ------------------------------------------------------------------ forward


def _select(prims: Renderables, subset: str) -> np.ndarray:
    if subset not in SUBSETS:
        raise ValueError(f"subset must be one of {SUBSETS}, got {subset!r}")
    if subset == "all":
        return np.arange(len(prims))
    return np.flatnonzero(prims.is_dynamic if subset == "dynamic" else ~prims.is_dynamic)


class _Prepared:
    """Projected, culled and depth-sorted primitives for one camera."""

    def __init__(self, prims: Renderables, camera: Camera, subset: str):
        sel = _select(prims, subset)
        scale = np.exp(prims.log_scale[sel])
        cov3 = covariance_3d(prims.rotation[sel], scale)
        proj = _project_arrays(prims.position[sel], cov3, camera)
        colors, sh_cache = eval_sh(prims.sh[sel], prims.position[sel], camera.center)
        keep = proj["valid"]
        self.sel_all = sel
        self.scale = scale
        self.proj = proj
        self.sh_cache = sh_cache
        self.keep = keep
        self.opacity = sigmoid(prims.opacity_logit[sel])
        feat = np.zeros((len(sel), N_FEAT))
        feat[:, 0:3] = colors
        feat[:, 3] = 1.0 / proj["z"]
        feat[:, 4] = 1.0
        feat[:, 5:8] = prims.velocity[sel]
        self.feat = feat
        # front-to-back, ties broken by input index
        local = np.flatnonzero(keep)
        order = np.lexsort((local, proj["z"][local]))
        self.order = local[order]


def _tile_ranges(camera: Camera, tile: int):
    out = []
    for y0 in range(0, camera.height, tile):
        for x0 in range(0, camera.width, tile):
            out.append((y0, min(y0 + tile, camera.height), x0, min(x0 + tile, camera.width)))
    return out


def _tile_members(prep: _Prepared, camera: Camera, settings: RenderSettings, tiles):
    """Sorted member list per tile.

    A Gaussian can only reach alpha >= alpha_min within
    r = sqrt(2 ln(o / alpha_min)) standard deviations (largest axis), so its
    square of that half-width bounds the tiles it touches.  With the alpha
    threshold disabled every Gaussian reaches every tile.
    """
    idx = prep.order
    if settings.alpha_min <= 0.0:
        return [idx for _ in tiles]
    o = prep.opacity[idx]
    live = o >= settings.alpha_min
    idx, o = idx[live], o[live]
    a, b, c = prep.proj["cov2d"][idx].T
    k = np.sqrt(np.maximum(2.0 * np.log(o / settings.alpha_min), 0.0))
    r = k * np.sqrt(_lambda_max(a, b, c))
    xi = prep.proj["xi"][idx]
    # pixel centres within r of the centre, as column/row index spans
    c_lo = np.ceil(xi[:, 0] - r - 0.5)
    c_hi = np.floor(xi[:, 0] + r - 0.5)
    r_lo = np.ceil(xi[:, 1] - r - 0.5)
    r_hi = np.floor(xi[:, 1] + r - 0.5)
    out = []
    for y0, y1, x0, x1 in tiles:
        hit = (c_hi >= x0) & (c_lo <= x1 - 1) & (r_hi >= y0) & (r_lo <= y1 - 1)
        out.append(idx[hit])
    return out


def _tile_forward(prep: _Prepared, members, bounds, settings: RenderSettings):
    y0, y1, x0, x1 = bounds
    u, v = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
    px, py = u.ravel(), v.ravel()
    npx = len(px)
    if len(members) == 0:
        return np.zeros((npx, N_FEAT)), None
    xi = prep.proj["xi"][members]
    con = prep.proj["conic"][members]
    dx = px[:, None] - xi[None, :, 0]
    dy = py[:, None] - xi[None, :, 1]
    power = -0.5 * (con[:, 0] * dx * dx + con[:, 2] * dy * dy) - con[:, 1] * dx * dy
    g = np.exp(power)
    alpha_raw = prep.opacity[members] * g
    clamped = alpha_raw > ALPHA_MAX
    alpha = np.where(clamped, ALPHA_MAX, alpha_raw)
    if settings.alpha_min > 0.0:
        alpha = np.where(alpha < settings.alpha_min, 0.0, alpha)
    if settings.t_min > 0.0:
        # contributions stop before the one that would push T below t_min
        t_incl = np.cumprod(1.0 - alpha, axis=1)
        alpha = np.where(t_incl >= settings.t_min, alpha, 0.0)
    one_minus = 1.0 - alpha
    t_incl = np.cumprod(one_minus, axis=1)
    t_excl = np.empty_like(t_incl)
    t_excl[:, 0] = 1.0
    t_excl[:, 1:] = t_incl[:, :-1]
    w = alpha * t_excl
    out = w @ prep.feat[members]
    # alpha depends smoothly on parameters only where it was neither skipped nor clamped
    active = (alpha > 0.0) & ~clamped
    return out, (dx, dy, g, alpha, t_excl, w, active)


def _assemble(prep, camera, sky, subset, settings, tile_out, tiles):
    h, w = camera.height, camera.width
    acc = np.zeros((h, w, N_FEAT))
    for (y0, y1, x0, x1), (vals, _) in zip(tiles, tile_out):
        acc[y0:y1, x0:x1] = vals.reshape(y1 - y0, x1 - x0, N_FEAT)
    color_g = acc[..., 0:3]
    depth = acc[..., 3]
    opacity = acc[..., 4]
    velocity = acc[..., 5:8]
    sky_rgb = None
    if subset == "all":
        sky_rgb = sample_directions(sky, camera.ray_directions())
        color = color_g + (1.0 - opacity)[..., None] * sky_rgb
    else:
        color = color_g.copy()
    return RenderMaps(color_g.copy(), depth.copy(), opacity.copy(), velocity.copy(), color, sky_rgb)


def _map_tiles(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda it: fn(*it), items))


def render(
    prims: Renderables,
    camera: Camera,
    sky: SkyCubemap,
    subset: str = "all",
    settings: RenderSettings | None = None,
    keep_state: bool = False,
) -> RenderMaps:
    """Blend colour, inverse depth, opacity and dynamic velocity maps.

    ``subset`` picks 'all', 'dynamic' or 'static' primitives; sky is only
    composited for 'all' (other subsets report ``color == color_g``).
    """
    settings = settings or RenderSettings()
    prep = _Prepared(prims, camera, subset)
    tiles = _tile_ranges(camera, settings.tile)
    members = _tile_members(prep, camera, settings, tiles)
    tile_out = _map_tiles(
        lambda m, b: _tile_forward(prep, m, b, settings), list(zip(members, tiles)), settings.threads
    )
    maps = _assemble(prep, camera, sky, subset, settings, tile_out, tiles)
    if keep_state:
        maps.state = (prep, tiles, members, tile_out, subset, settings)
    return maps


def composite_sky(color_g, opacity, sky: SkyCubemap, camera: Camera) -> np.ndarray:
    sky_rgb = sample_directions(sky, camera.ray_directions())
    return color_g + (1.0 - opacity)[..., None] * sky_rgb


# ---------------------------------------------------------------- reference


def render_reference(prims: Renderables, camera: Camera, sky: SkyCubemap, subset: str = "all") -> RenderMaps:
    """Plain evaluation of the blending sums: one global depth order, every
    primitive in front of the near plane visits every pixel, no alpha skip
    and no early termination.  Slow; used as an oracle and for ground truth."""
    sel = _select(prims, subset)
    pos = prims.position[sel]
    cov3 = covariance_3d(prims.rotation[sel], np.exp(prims.log_scale[sel]))
    opacity = sigmoid(prims.opacity_logit[sel])
    colors, _ = eval_sh(prims.sh[sel], pos, camera.center)
    h, w = camera.height, camera.width
    acc = np.zeros((h, w, N_FEAT))
    if len(sel):
        p = _project_arrays(pos, cov3, camera)
        idx = np.flatnonzero(p["valid"])
        idx = idx[np.lexsort((idx, p["z"][idx]))]
        feat = np.concatenate(
            [colors[idx], 1.0 / p["z"][idx, None], np.ones((len(idx), 1)), prims.velocity[sel][idx]], axis=1
        )
        xi, con, o = p["xi"][idx], p["conic"][idx], opacity[idx]
        for i in range(h):
            for j in range(w):
                dx = j + 0.5 - xi[:, 0]
                dy = i + 0.5 - xi[:, 1]
                power = -0.5 * (con[:, 0] * dx * dx + con[:, 2] * dy * dy) - con[:, 1] * dx * dy
                alpha = np.minimum(o * np.exp(power), ALPHA_MAX)
                trans = np.concatenate([[1.0], np.cumprod(1.0 - alpha)[:-1]])
                acc[i, j] = (alpha * trans) @ feat
    color_g = acc[..., 0:3]
    opac = acc[..., 4]
    sky_rgb = None
    if subset == "all":
        sky_rgb = sample_directions(sky, camera.ray_directions())
        color = color_g + (1.0 - opac)[..., None] * sky_rgb
    else:
        color = color_g.copy()
    return RenderMaps(color_g.copy(), acc[..., 3].copy(), opac.copy(), acc[..., 5:8].copy(), color, sky_rgb)


# ------------------------------------------------------------------ adjoint


def _tile_backward(prep: _Prepared, members, bounds, cache, cot):
    """Per-tile gradients on (opacity, conic, centre, features) of members."""
    y0, y1, x0, x1 = bounds
    k = len(members)
    if k == 0 or cache is None:
        return None
    dx, dy, g, alpha, t_excl, w, active = cache
    gt = cot[y0:y1, x0:x1].reshape(-1, N_FEAT)
    d_feat = w.T @ gt
    hval = gt @ prep.feat[members].T  # (P, K)
    wh = w * hval
    suffix = np.cumsum(wh[:, ::-1], axis=1)[:, ::-1]
    after = suffix - wh
    d_alpha = t_excl * hval - after / (1.0 - alpha)
    d_alpha = np.where(active, d_alpha, 0.0)
    o = prep.opacity[members]
    d_opacity = np.einsum("pk,pk->k", d_alpha, g)
    d_power = d_alpha * o * g
    con = prep.proj["conic"][members]
    d_conic = np.stack(
        [
            -0.5 * np.einsum("pk,pk->k", d_power, dx * dx),
            -np.einsum("pk,pk->k", d_power, dx * dy),
            -0.5 * np.einsum("pk,pk->k", d_power, dy * dy),
        ],
        axis=1,
    )
    gx = np.einsum("pk,pk->k", d_power, dx)
    gy = np.einsum("pk,pk->k", d_power, dy)
    d_xi = np.stack([con[:, 0] * gx + con[:, 1] * gy, con[:, 1] * gx + con[:, 2] * gy], axis=1)
    return d_opacity, d_conic, d_xi, d_feat


def _cotangent_image(maps: RenderMaps, cot: dict, h: int, w: int):
    g = np.zeros((h, w, N_FEAT))
    d_color = cot.get("color")
    if d_color is not None:
        g[..., 0:3] += d_color
        if maps.sky_rgb is not None:
            g[..., 4] -= np.sum(d_color * maps.sky_rgb, axis=-1)
    for key, sl in (("color_g", slice(0, 3)), ("velocity", slice(5, 8))):
        if cot.get(key) is not None:
            g[..., sl] += cot[key]
    if cot.get("depth") is not None:
        g[..., 3] += cot["depth"]
    if cot.get("opacity") is not None:
        g[..., 4] += cot["opacity"]
    return g


def render_adjoint(
    prims: Renderables,
    camera: Camera,
    sky: SkyCubemap,
    cotangents: dict,
    maps: RenderMaps | None = None,
    subset: str = "all",
    settings: RenderSettings | None = None,
) -> dict:
    """Gradients of ``sum(cot * map)`` with respect to every primitive
    attribute and the sky texels.

    ``cotangents`` may hold 'color' (composited), 'color_g', 'depth',
    'opacity' and 'velocity'.  When ``maps`` carries render state it is
    reused; otherwise the forward pass is recomputed.
    """
    if maps is None or maps.state is None:
        maps = render(prims, camera, sky, subset, settings, keep_state=True)
    prep, tiles, members, tile_out, subset, settings = maps.state
    h, w = camera.height, camera.width
    cot_img = _cotangent_image(maps, cotangents, h, w)

    results = _map_tiles(
        lambda m, b, to: _tile_backward(prep, m, b, to[1], cot_img),
        list(zip(members, tiles, tile_out)),
        settings.threads,
    )
    n = len(prep.sel_all)
    d_opacity = np.zeros(n)
    d_conic = np.zeros((n, 3))
    d_xi = np.zeros((n, 2))
    d_feat = np.zeros((n, N_FEAT))
    # private per-tile buffers merged in fixed tile order
    for mem, res in zip(members, results):
        if res is None:
            continue
        d_opacity[mem] += res[0]
        d_conic[mem] += res[1]
        d_xi[mem] += res[2]
        d_feat[mem] += res[3]

    grads = _chain_primitives(prims, camera, prep, d_opacity, d_conic, d_xi, d_feat)
    d_color = cotangents.get("color")
    if subset == "all" and d_color is not None:
        d_sky_rgb = (1.0 - maps.opacity)[..., None] * d_color
        grads["sky"] = sample_directions_adjoint(sky, camera.ray_directions(), d_sky_rgb)
    else:
        grads["sky"] = np.zeros_like(sky.faces)
    return grads


def _chain_primitives(prims, camera, prep, d_opacity, d_conic, d_xi, d_feat):
    sel = prep.sel_all
    p = prep.proj
    keep = prep.keep[:, None]
    d_opacity = np.where(prep.keep, d_opacity, 0.0)
    d_conic = np.where(keep, d_conic, 0.0)
    d_xi = np.where(keep, d_xi, 0.0)
    d_feat = np.where(keep, d_feat, 0.0)

    # conic = inverse(cov2d): dS = -Q dQ Q with the off-diagonal split evenly
    q = np.empty((len(sel), 2, 2))
    q[:, 0, 0], q[:, 0, 1], q[:, 1, 0], q[:, 1, 1] = p["conic"][:, 0], p["conic"][:, 1], p["conic"][:, 1], p["conic"][:, 2]
    gq = np.empty_like(q)
    gq[:, 0, 0], gq[:, 1, 1] = d_conic[:, 0], d_conic[:, 2]
    gq[:, 0, 1] = gq[:, 1, 0] = 0.5 * d_conic[:, 1]
    gs = -q @ gq @ q
    jac, m = p["jac"], p["m"]
    d_m = np.swapaxes(jac, 1, 2) @ gs @ jac
    d_jac = 2.0 * gs @ jac @ m
    wr = camera.rotation
    d_cov3 = wr.T @ d_m @ wr

    fx, fy = camera.fx, camera.fy
    x, y, z = p["pc"][:, 0], p["pc"][:, 1], p["z"]
    d_pc = np.zeros((len(sel), 3))
    d_pc[:, 0] = -d_jac[:, 0, 2] * fx / z**2 + d_xi[:, 0] * fx / z
    d_pc[:, 1] = -d_jac[:, 1, 2] * fy / z**2 + d_xi[:, 1] * fy / z
    d_pc[:, 2] = (
        -d_jac[:, 0, 0] * fx / z**2
        + d_jac[:, 0, 2] * 2 * fx * x / z**3
        - d_jac[:, 1, 1] * fy / z**2
        + d_jac[:, 1, 2] * 2 * fy * y / z**3
        - d_xi[:, 0] * fx * x / z**2
        - d_xi[:, 1] * fy * y / z**2
        - d_feat[:, 3] / z**2
    )
    d_pos = d_pc @ wr

    d_sh, d_rel = eval_sh_adjoint(prims.sh[sel], prep.sh_cache, d_feat[:, 0:3])
    if d_rel is not None:
        d_pos = d_pos + d_rel
    d_rot, d_scale = covariance_3d_adjoint(prims.rotation[sel], prep.scale, d_cov3)
    o = prep.opacity

    n_all = len(prims)
    out = {
        "position": np.zeros((n_all, 3)),
        "rotation": np.zeros((n_all, 4)),
        "log_scale": np.zeros((n_all, 3)),
        "opacity_logit": np.zeros(n_all),
        "sh": np.zeros(prims.sh.shape),
        "velocity": np.zeros((n_all, 3)),
    }
    out["position"][sel] = d_pos
    out["rotation"][sel] = d_rot
    out["log_scale"][sel] = d_scale * prep.scale
    out["opacity_logit"][sel] = d_opacity * o * (1.0 - o)
    out["sh"][sel] = d_sh
    out["velocity"][sel] = d_feat[:, 5:8]
    return out
