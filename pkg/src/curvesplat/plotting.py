"""Report figures written as PNG files (non-interactive backend)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .optim import read_loss_log  # noqa: E402


def plot_trajectories(scene, dataset, path: str) -> None:
    """Top view of learned, true and annotated object centers."""
    from .evaluate import center_track

    taus = [fr.tau for fr in dataset.raw]
    learned = center_track(scene, taus)
    gt = dataset.gt_scene() if dataset.gt_scene_path else None
    truth = center_track(gt, taus) if gt is not None else None
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for g, rows in sorted(dataset.object_points.items()):
        ann = np.array([rows[rows[:, 0] == k, 2:5].mean(axis=0) for k in np.unique(rows[:, 0])])
        ax.plot(ann[:, 0], ann[:, 1], ".", ms=3, color="0.6", label="annotated" if g == 1 else None)
        if truth is not None and g - 1 < len(truth):
            ax.plot(truth[g - 1, :, 0], truth[g - 1, :, 1], "k-", lw=1, label="true" if g == 1 else None)
        if g - 1 < len(learned):
            ax.plot(learned[g - 1, :, 0], learned[g - 1, :, 1], "--", lw=1.5, label=f"learned {g}")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=8)
    ax.set_title("Object center trajectories")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_renders(scene, dataset, path: str, settings=None, count: int = 3) -> None:
    """Ground truth, full render and dynamic-only render for a few
    held-out frames."""
    from .evaluate import frame_metrics

    idx = list(dataset.test_indices) or list(dataset.train_indices)
    if len(idx) > count:
        idx = [idx[int(round(k))] for k in np.linspace(0, len(idx) - 1, count)]
    fig, axes = plt.subplots(len(idx), 3, figsize=(9, 2.4 * len(idx)), squeeze=False)
    for row, i in zip(axes, idx):
        frame = dataset.frame(i)
        fm, full, dyn = frame_metrics(scene, frame, settings)
        for ax, img, title in zip(
            row,
            (frame.supervision.image, full.color, dyn.color_g),
            (f"frame {i}", f"render {fm.psnr:.1f} dB", "dynamic only"),
        ):
            ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
            ax.set_title(title, fontsize=9)
            ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss(loss_csv: str, path: str) -> None:
    rows = read_loss_log(loss_csv)
    it = np.array([r["iter"] for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("total", "photometric", "depth", "dynamic", "velocity", "icc", "sky"):
        vals = np.array([r[key] for r in rows])
        if len(vals) > 20:
            k = min(50, len(vals) // 10)
            vals = np.convolve(vals, np.ones(k) / k, mode="valid")
        ax.plot(it[: len(vals)], np.maximum(vals, 1e-12), label=key, lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss (moving average)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def report_figures(scene, dataset, res, out_dir: str, loss_csv=None, settings=None) -> list:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if scene.n_groups:
        p = os.path.join(out_dir, "trajectories.png")
        plot_trajectories(scene, dataset, p)
        paths.append(p)
    p = os.path.join(out_dir, "renders.png")
    plot_renders(scene, dataset, p, settings)
    paths.append(p)
    if loss_csv:
        p = os.path.join(out_dir, "loss.png")
        plot_loss(loss_csv, p)
        paths.append(p)
    return paths
