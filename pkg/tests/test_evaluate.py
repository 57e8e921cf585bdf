import os

import numpy as np
import pytest

from curvesplat.dataset import load_dataset
from curvesplat.evaluate import TABLE_COLUMNS, EvalError, evaluate, evaluate_run, format_table, trajectory_errors
from curvesplat.metrics import PSNR_SENTINEL
from curvesplat.raster import RenderSettings, render
from curvesplat.scene import gather_renderables, save_checkpoint


def self_rendered(ds, gt):
    """The dataset with images replaced by float renders of ``gt`` so that
    evaluating ``gt`` is exact (the stored images are 8-bit)."""
    frames = []
    for fr in ds.raw:
        prims, _ = gather_renderables(gt, fr.tau)
        frames.append(render(prims, fr.camera, gt.sky, "all").color)
    return frames


def test_ground_truth_self_evaluation(small_dataset_dir):
    ds = load_dataset(str(small_dataset_dir))
    gt = ds.gt_scene()
    renders = self_rendered(ds, gt)
    orig = ds.frame

    def frame(i):
        f = orig(i)
        f.supervision.image = np.clip(renders[i], 0.0, 1.0)
        return f

    ds.frame = frame
    res = evaluate(gt, ds, RenderSettings())
    for split in ("recon", "nvs"):
        assert res.summary[split]["psnr"] == PSNR_SENTINEL
        assert res.summary[split]["ssim"] == pytest.approx(1.0, abs=1e-12)
    assert all(t["rmse_m"] == 0.0 for t in res.trajectory)


def test_translated_center_rmse(small_dataset_dir):
    ds = load_dataset(str(small_dataset_dir))
    gt = ds.gt_scene()
    moved = gt.copy()
    d = np.array([0.3, -0.2, 0.1])
    moved.center += d
    taus = [fr.tau for fr in ds.raw]
    (t,) = trajectory_errors(moved, gt, taus, 2.0)
    assert t["rmse_m"] == pytest.approx(np.linalg.norm(d), rel=0.1)
    assert t["rmse_fraction"] == pytest.approx(t["rmse_m"] / 2.0)


def test_group_count_mismatch(small_dataset_dir):
    ds = load_dataset(str(small_dataset_dir))
    from curvesplat.scene import empty_scene

    with pytest.raises(EvalError):
        trajectory_errors(empty_scene(), ds.gt_scene(), [0.0], 1.0)


def test_table_columns(small_dataset_dir):
    ds = load_dataset(str(small_dataset_dir))
    res = evaluate(ds.gt_scene(), ds)
    header = format_table(res).splitlines()[0]
    cols = [c.strip() for c in header.split("|")]
    assert cols == ["Method"] + [c[2] for c in TABLE_COLUMNS]
    assert len(TABLE_COLUMNS) == 6


def test_evaluate_run_outputs_and_read_only(small_dataset_dir, tmp_path):
    ds = load_dataset(str(small_dataset_dir))
    run = tmp_path / "run"
    save_checkpoint(ds.gt_scene(), str(run / "checkpoint.json"))
    before = {f: os.path.getmtime(run / f) for f in os.listdir(run)}
    res = evaluate_run(str(run), ds, str(tmp_path / "out"))
    assert {f: os.path.getmtime(run / f) for f in os.listdir(run)} == before
    for f in ("metrics.csv", "frames.csv", "trajectory.csv", "table.txt", "trajectories.png", "renders.png"):
        assert (tmp_path / "out" / f).stat().st_size > 0
    assert res.summary["nvs"]["frames"] == len(ds.test_indices)


def test_missing_checkpoint(tmp_path, small_dataset_dir):
    with pytest.raises(EvalError):
        evaluate_run(str(tmp_path), load_dataset(str(small_dataset_dir)))
