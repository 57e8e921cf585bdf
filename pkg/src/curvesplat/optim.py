"""Adam over named parameter groups, the training loop, pruning and the
finite-difference gradient checker."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .losses import LossWeights, total_loss
from .raster import RenderSettings, render, render_adjoint
from .scene import PARAM_GROUPS, Scene, dynamic_t, gather_adjoint, gather_renderables, save_checkpoint, sigmoid

log = logging.getLogger(__name__)

ADAM_EPS = 1e-15
QUAT_GROUPS = ("static_rotation", "dynamic_rotation")
DECAYED_GROUPS = ("static_position", "dynamic_offset", "center")
STATIC_INDEXED = ("static_position", "static_rotation", "static_log_scale", "static_opacity", "static_color")
DYNAMIC_INDEXED = ("dynamic_offset", "dynamic_rotation", "dynamic_log_scale", "dynamic_opacity", "dynamic_color")

DEFAULT_LR = {
    "static_position": 1.6e-4,
    "dynamic_offset": 1.6e-4,
    "center": 1.6e-4,
    "static_opacity": 0.05,
    "dynamic_opacity": 0.05,
    "static_log_scale": 5e-3,
    "dynamic_log_scale": 5e-3,
    "static_rotation": 1e-3,
    "dynamic_rotation": 1e-3,
    "static_color": 2.5e-3,
    "dynamic_color": 2.5e-3,
    "time": 1e-4,
    "sky": 2e-2,
}


class NonFiniteError(RuntimeError):
    pass


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: dict, beta1=0.9, beta2=0.999, eps=ADAM_EPS, enabled=None):
    """One bias-corrected Adam update, in place on ``params``.

    ``lr`` maps group name to learning rate; groups missing from ``lr`` or
    disabled are left untouched (their moments still exist).  Quaternion
    groups are renormalised and sky texels clamped to [0, 1] afterwards.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(f"non-finite gradient in group '{name}' ({bad} entries); iteration aborted")
    state.step += 1
    b1t = 1.0 - beta1**state.step
    b2t = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p, dtype=np.float64)
            state.v[name] = np.zeros_like(p, dtype=np.float64)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        rate = lr.get(name, 0.0)
        if rate == 0.0 or (enabled is not None and not enabled.get(name, True)):
            continue
        step = rate * (m / b1t) / (np.sqrt(v / b2t) + eps)
        p -= step.astype(p.dtype, copy=False)
        if name in QUAT_GROUPS and len(p):
            p /= np.linalg.norm(p, axis=-1, keepdims=True)
        if name == "sky":
            np.clip(p, 0.0, 1.0, out=p)
    return params, state


def decayed_lr(lr0: float, lr1: float, it: int, total: int) -> float:
    """Log-linear interpolation from lr0 at it=0 to lr1 at it=total."""
    if total <= 0 or lr0 <= 0 or lr1 <= 0:
        return lr0
    s = min(max(it / total, 0.0), 1.0)
    return math.exp(math.log(lr0) * (1 - s) + math.log(lr1) * s)


def prune(scene: Scene, state: AdamState | None, threshold: float = 0.005):
    """Remove primitives whose opacity is below ``threshold``; returns the
    number removed."""
    ks = sigmoid(scene.static_opacity) >= threshold
    kd = sigmoid(scene.dynamic_opacity) >= threshold
    removed = int((~ks).sum() + (~kd).sum())
    if removed == 0:
        return 0
    scene.keep(ks, kd)
    if state is not None:
        for name in STATIC_INDEXED + DYNAMIC_INDEXED:
            mask = ks if name in STATIC_INDEXED else kd
            for acc in (state.m, state.v):
                if name in acc:
                    acc[name] = acc[name][mask]
    return removed


# ---------------------------------------------------------------- objective


def frame_objective(scene: Scene, frame, weights: LossWeights, settings: RenderSettings | None = None, need_grad=True):
    """Loss breakdown and gradients for every parameter group on one frame.

    With ``need_grad=False`` the gradient dict is None.
    """
    settings = settings or RenderSettings()
    cam = frame.camera
    prims, cache = gather_renderables(scene, cam.tau)
    maps = render(prims, cam, scene.sky, "all", settings, keep_state=need_grad)
    dyn = render(prims, cam, scene.sky, "dynamic", settings, keep_state=need_grad)
    t_dyn = dynamic_t(scene, cache)
    breakdown, cot, dyn_cot, d_off, d_t = total_loss(maps, dyn, frame.supervision, scene.dynamic_offset, t_dyn, weights)
    if not need_grad:
        return breakdown, None, (maps, dyn)
    g_all = render_adjoint(prims, cam, scene.sky, cot, maps)
    g_dyn = render_adjoint(prims, cam, scene.sky, dyn_cot, dyn)
    prim_grads = {k: g_all[k] + g_dyn[k] for k in g_all if k != "sky"}
    d_t_group = np.bincount(scene.dynamic_group - 1, weights=d_t, minlength=scene.n_groups) if scene.n_dynamic else None
    grads = gather_adjoint(scene, cache, prim_grads, d_t_extra=d_t_group)
    grads["dynamic_offset"] += d_off
    grads["sky"] += g_all["sky"] + g_dyn["sky"]
    return breakdown, grads, (maps, dyn)


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    scene: Scene
    log: list
    pruned: int = 0


def _learning_rates(config, it: int, scale: float = 1.0) -> dict:
    lr = dict(DEFAULT_LR)
    lr.update(config.lr)
    for name in DECAYED_GROUPS:
        lr0 = lr[name] * scale
        lr[name] = decayed_lr(lr0, lr0 * config.lr_final_ratio, it, config.iterations)
    return lr


def train(dataset, scene: Scene, config, out_dir: str | None = None, progress=None) -> TrainResult:
    """Optimise ``scene`` in place on the dataset's training frames.

    Position-like rates are multiplied by ``config.spatial_lr_scale``, or by
    the dataset's scene extent when that is None.  Frames are visited in a fresh seeded permutation each epoch.  Gaussians
    below the opacity threshold are pruned every ``prune_interval``
    iterations.  A checkpoint is written to ``out_dir`` every
    ``checkpoint_interval`` iterations and at the end; a non-finite loss
    stops training with the last good checkpoint left in place.
    """
    rng = np.random.default_rng(config.seed)
    scale = config.spatial_lr_scale
    if scale is None:
        scale = float(getattr(dataset, "meta", {}).get("extent", 1.0))
    settings = RenderSettings(threads=config.threads)
    weights = config.weights
    train_idx = list(dataset.train_indices)
    if not train_idx:
        raise ValueError("dataset has no training frames")
    state = AdamState()
    rows = []
    pruned = 0
    order: list = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    for it in range(config.iterations):
        if not order:
            order = list(rng.permutation(train_idx))
        frame = dataset.frame(int(order.pop()))
        breakdown, grads, _ = frame_objective(scene, frame, weights, settings)
        if not math.isfinite(breakdown.total):
            raise NonFiniteError(f"non-finite loss at iteration {it}; last good checkpoint kept")
        adam_step(scene.params(), grads, state, _learning_rates(config, it, scale))
        row = {"iter": it, "frame": frame.index, **breakdown.as_row(), "n_static": scene.n_static, "n_dynamic": scene.n_dynamic}
        rows.append(row)
        if config.prune_interval and (it + 1) % config.prune_interval == 0:
            pruned += prune(scene, state, config.prune_threshold)
        if out_dir and config.checkpoint_interval and (it + 1) % config.checkpoint_interval == 0:
            save_checkpoint(scene, os.path.join(out_dir, "checkpoint.json"))
        if progress is not None:
            progress(it, row)
    if out_dir:
        save_checkpoint(scene, os.path.join(out_dir, "checkpoint.json"))
        write_loss_log(rows, os.path.join(out_dir, "loss.csv"))
    return TrainResult(scene, rows, pruned)


LOG_FIELDS = ("iter", "frame", "photometric", "sky", "icc", "dynamic", "velocity", "depth", "total", "n_static", "n_dynamic")


def write_loss_log(rows, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_loss_log(path: str) -> list:
    with open(path) as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ------------------------------------------------------------ gradient check


@dataclass
class FDReport:
    errors: dict  # group -> max relative error
    samples: dict  # group -> number of parameters probed

    def worst(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def relative_error(a, b) -> float:
    return abs(a - b) / (abs(a) + abs(b) + 1e-8)


def fd_check(value_fn, params: dict, grads: dict, per_group: int = 32, h: float = 1e-5, seed: int = 0, groups=None) -> FDReport:
    """Central differences on a random subsample of each parameter group.

    ``value_fn()`` evaluates the scalar objective from the current contents
    of ``params``, which are perturbed in place and restored.  ``grads``
    holds the analytic gradients being checked.
    """
    for name, arr in params.items():
        if np.asarray(arr).dtype != np.float64:
            raise TypeError(f"fd_check needs double precision; group '{name}' is {np.asarray(arr).dtype}")
    rng = np.random.default_rng(seed)
    errors, samples = {}, {}
    for name in groups or params:
        arr = params[name]
        if arr.size == 0:
            continue
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"group '{name}' is not contiguous; cannot perturb in place")
        g = np.asarray(grads[name]).reshape(-1)
        idx = np.sort(rng.choice(arr.size, size=min(per_group, arr.size), replace=False))
        worst = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = value_fn()
            flat[i] = old - h
            fm = value_fn()
            flat[i] = old
            worst = max(worst, relative_error((fp - fm) / (2 * h), float(g[i])))
        errors[name] = worst
        samples[name] = len(idx)
    return FDReport(errors, samples)


def scene_fd_check(scene: Scene, frame, weights: LossWeights, settings: RenderSettings | None = None, **kw) -> FDReport:
    """fd_check of the full per-frame objective over every parameter group."""
    settings = settings or RenderSettings.exact()
    _, grads, _ = frame_objective(scene, frame, weights, settings)

    def value_fn():
        return frame_objective(scene, frame, weights, settings, need_grad=False)[0].total

    return fd_check(value_fn, scene.params(), grads, **kw)


__all__ = [
    "ADAM_EPS", "AdamState", "DEFAULT_LR", "FDReport", "NonFiniteError", "PARAM_GROUPS", "TrainResult",
    "adam_step", "decayed_lr", "fd_check", "frame_objective", "prune", "relative_error", "scene_fd_check", "train",
]
