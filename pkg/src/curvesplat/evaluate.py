"""Evaluation of a trained scene: image metrics on the training frames
(reconstruction) and held-out frames (novel views), leakage of the velocity
map outside dynamic regions, and recovery of object center trajectories."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .losses import velocity_loss
from .metrics import dyn_psnr, mean_dyn_psnr, psnr, ssim
from .raster import RenderSettings, render
from .scene import Scene, gather_renderables, load_checkpoint

TABLE_COLUMNS = (
    ("recon", "psnr", "Recon PSNR"), ("recon", "ssim", "Recon SSIM"), ("recon", "dyn_psnr", "Recon Dyn-PSNR"),
    ("nvs", "psnr", "NVS PSNR"), ("nvs", "ssim", "NVS SSIM"), ("nvs", "dyn_psnr", "NVS Dyn-PSNR"),
)


class EvalError(ValueError):
    pass


@dataclass
class FrameMetrics:
    index: int
    psnr: float
    ssim: float
    dyn_psnr: float | None
    velocity_leak: float


@dataclass
class EvalResult:
    frames: dict = field(default_factory=dict)  # split -> [FrameMetrics]
    summary: dict = field(default_factory=dict)  # split -> {metric: value}
    trajectory: list = field(default_factory=list)  # per-object dicts
    extent: float = 1.0


def frame_metrics(scene: Scene, frame, settings: RenderSettings | None = None):
    """Metrics for one frame; returns (FrameMetrics, full render, dynamic render)."""
    settings = settings or RenderSettings()
    prims, _ = gather_renderables(scene, frame.camera.tau)
    full = render(prims, frame.camera, scene.sky, "all", settings)
    dyn = render(prims, frame.camera, scene.sky, "dynamic", settings)
    sup = frame.supervision
    img = np.clip(full.color, 0.0, 1.0)
    leak, _ = velocity_loss(dyn.velocity, sup.dyn_mask)
    fm = FrameMetrics(frame.index, psnr(img, sup.image), ssim(img, sup.image), dyn_psnr(img, sup.image, sup.dyn_mask), leak)
    return fm, full, dyn


def summarize(frames: list) -> dict:
    if not frames:
        return {"frames": 0, "psnr": None, "ssim": None, "dyn_psnr": None, "velocity_leak": None}
    return {
        "frames": len(frames),
        "psnr": float(np.mean([f.psnr for f in frames])),
        "ssim": float(np.mean([f.ssim for f in frames])),
        "dyn_psnr": mean_dyn_psnr([f.dyn_psnr for f in frames]),
        "velocity_leak": float(np.mean([f.velocity_leak for f in frames])),
    }


def center_track(scene: Scene, taus) -> np.ndarray:
    """(G, len(taus), 3) learned centers at the given timestamps."""
    from .synthetic import center_positions

    return center_positions(scene, taus)


def trajectory_errors(scene: Scene, gt: Scene, taus, extent: float) -> list:
    """Per object RMS distance between learned and true centers over
    ``taus``; groups are matched by id."""
    if scene.n_groups != gt.n_groups:
        raise EvalError(f"scene has {scene.n_groups} objects, ground truth {gt.n_groups}")
    learned = center_track(scene, taus)
    truth = center_track(gt, taus)
    out = []
    for g in range(gt.n_groups):
        d = np.linalg.norm(learned[g] - truth[g], axis=1)
        rmse = float(np.sqrt(np.mean(d * d)))
        out.append({"group": g + 1, "rmse_m": rmse, "rmse_fraction": rmse / extent, "max_m": float(d.max())})
    return out


def evaluate_images(scene: Scene, frames_by_split: dict, settings: RenderSettings | None = None) -> EvalResult:
    res = EvalResult()
    for split, frames in frames_by_split.items():
        res.frames[split] = [frame_metrics(scene, f, settings)[0] for f in frames]
        res.summary[split] = summarize(res.frames[split])
    return res


def evaluate(scene: Scene, dataset, settings: RenderSettings | None = None, gt: Scene | None = None) -> EvalResult:
    """Image metrics on the train (recon) and test (nvs) frames plus, when a
    ground-truth scene is available, trajectory errors."""
    split = {
        "recon": [dataset.frame(i) for i in dataset.train_indices],
        "nvs": [dataset.frame(i) for i in dataset.test_indices],
    }
    res = evaluate_images(scene, split, settings)
    res.extent = float(dataset.meta.get("extent", 1.0))
    if gt is None and dataset.gt_scene_path:
        gt = dataset.gt_scene()
    if gt is not None and gt.n_groups:
        taus = [fr.tau for fr in dataset.raw]
        res.trajectory = trajectory_errors(scene, gt, taus, res.extent)
    return res


def _cell(v, digits=3):
    return "-" if v is None else f"{v:.{digits}f}"


def format_table(res: EvalResult, method: str = "ours") -> str:
    head = ["Method"] + [c[2] for c in TABLE_COLUMNS]
    row = [method] + [_cell(res.summary.get(s, {}).get(k), 4 if k == "ssim" else 2) for s, k, _ in TABLE_COLUMNS]
    widths = [max(len(a), len(b)) for a, b in zip(head, row)]
    lines = [" | ".join(h.ljust(w) for h, w in zip(head, widths)), "-+-".join("-" * w for w in widths)]
    lines.append(" | ".join(c.ljust(w) for c, w in zip(row, widths)))
    if res.trajectory:
        lines.append("")
        lines.append(f"Trajectory RMSE (scene extent {res.extent:.3f} m)")
        for t in res.trajectory:
            lines.append(f"  object {t['group']}: {t['rmse_m']:.4f} m ({100 * t['rmse_fraction']:.2f}% of extent)")
    return "\n".join(lines) + "\n"


def write_outputs(res: EvalResult, out_dir: str, method: str = "ours") -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "frames", "psnr", "ssim", "dyn_psnr", "velocity_leak"])
        for split, s in res.summary.items():
            w.writerow([split, s["frames"]] + ["" if s[k] is None else repr(s[k]) for k in ("psnr", "ssim", "dyn_psnr", "velocity_leak")])
    with open(os.path.join(out_dir, "frames.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "frame", "psnr", "ssim", "dyn_psnr", "velocity_leak"])
        for split, frames in res.frames.items():
            for f in frames:
                w.writerow([split, f.index, repr(f.psnr), repr(f.ssim), "" if f.dyn_psnr is None else repr(f.dyn_psnr), repr(f.velocity_leak)])
    with open(os.path.join(out_dir, "trajectory.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "rmse_m", "rmse_fraction_of_extent", "max_m", "extent_m"])
        for t in res.trajectory:
            w.writerow([t["group"], repr(t["rmse_m"]), repr(t["rmse_fraction"]), repr(t["max_m"]), repr(res.extent)])
    with open(os.path.join(out_dir, "table.txt"), "w") as fh:
        fh.write(format_table(res, method))


def evaluate_run(run_dir: str, dataset, out_dir: str | None = None, settings=None, figures=True) -> EvalResult:
    """Evaluate ``<run_dir>/checkpoint.json``; outputs go to ``out_dir``
    (default ``<run_dir>/eval``).  Inputs are only read."""
    ckpt = os.path.join(run_dir, "checkpoint.json")
    if not os.path.exists(ckpt):
        raise EvalError(f"no checkpoint at {ckpt}")
    scene = load_checkpoint(ckpt)
    res = evaluate(scene, dataset, settings)
    out_dir = out_dir or os.path.join(run_dir, "eval")
    write_outputs(res, out_dir)
    if figures:
        from . import plotting

        loss_csv = os.path.join(run_dir, "loss.csv")
        plotting.report_figures(scene, dataset, res, out_dir, loss_csv if os.path.exists(loss_csv) else None, settings)
    return res
