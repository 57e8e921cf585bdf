"""Dataset layout on disk and its loader.

    <root>/manifest.json          cameras, timestamps, split, objects, thresholds
    <root>/images/NNN.ppm         colour frames
    <root>/depth/NNN.pfm          sparse inverse depth (0 where invalid)
    <root>/depth/NNN_valid.pgm    depth validity
    <root>/masks/NNN_sky.pgm      sky mask
    <root>/masks/NNN_dyn.pgm      dynamic-object mask
    <root>/points/static.csv      x,y,z,r,g,b
    <root>/points/object_G.csv    frame,tau,x,y,z,r,g,b
    <root>/gt/checkpoint.json     ground-truth scene (synthetic data only)

Everything written by ``Dataset.save`` is a pure function of the in-memory
contents, so load -> save reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .imageio import read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm
from .losses import FrameSupervision
from .raster import Camera
from .scene import load_checkpoint

MANIFEST_VERSION = 1


class DatasetError(ValueError):
    pass


def split_every_4th(n: int):
    """Test frames are those with index divisible by 4; the rest train."""
    if n < 4:
        warnings.warn(f"only {n} frames; all used for training", stacklevel=2)
        return list(range(n)), []
    test = [i for i in range(n) if i % 4 == 0]
    train = [i for i in range(n) if i % 4 != 0]
    return train, test


@dataclass
class Frame:
    index: int
    camera: Camera
    supervision: FrameSupervision


@dataclass
class RawFrame:
    """On-disk representation of one frame (quantised / single precision)."""

    tau: float
    camera: Camera
    image: np.ndarray  # uint8 H x W x 3
    inv_depth: np.ndarray  # float32 H x W
    depth_valid: np.ndarray  # bool
    sky_mask: np.ndarray  # bool
    dyn_mask: np.ndarray  # bool

    def to_frame(self, index: int) -> Frame:
        sup = FrameSupervision(
            image=self.image.astype(np.float64) / 255.0,
            inv_depth=self.inv_depth.astype(np.float64),
            depth_valid=self.depth_valid.copy(),
            sky_mask=self.sky_mask.astype(np.float64),
            dyn_mask=self.dyn_mask.astype(np.float64),
        )
        return Frame(index, self.camera, sup)


def _fmt(v: float) -> str:
    return repr(float(v))


class Dataset:
    def __init__(self, frames, static_points, static_colors, object_points, meta=None, gt_scene_path=None, root=None):
        self.raw = list(frames)
        self.static_points = np.asarray(static_points, dtype=np.float64).reshape(-1, 3)
        self.static_colors = np.asarray(static_colors, dtype=np.float64).reshape(-1, 3)
        # group -> array of rows (frame, tau, x, y, z, r, g, b)
        self.object_points = {int(g): np.asarray(v, dtype=np.float64).reshape(-1, 8) for g, v in object_points.items()}
        self.meta = dict(meta or {})
        self.gt_scene_path = gt_scene_path
        self.root = root
        self.train_indices, self.test_indices = split_every_4th(len(self.raw))
        self._cache: dict = {}

    def __len__(self) -> int:
        return len(self.raw)

    def frame(self, i: int) -> Frame:
        if i not in self._cache:
            self._cache[i] = self.raw[i].to_frame(i)
        return self._cache[i]

    def object_frames(self) -> dict:
        """group -> [(tau, points, colors)] ordered by frame."""
        out = {}
        for g, rows in sorted(self.object_points.items()):
            frames = []
            for f in np.unique(rows[:, 0]):
                sel = rows[rows[:, 0] == f]
                frames.append((float(sel[0, 1]), sel[:, 2:5], sel[:, 5:8]))
            out[g] = frames
        return out

    def gt_scene(self):
        if not self.gt_scene_path:
            raise DatasetError("dataset has no ground-truth scene")
        return load_checkpoint(self.gt_scene_path)

    # ---------------------------------------------------------------- disk
    def manifest(self) -> dict:
        frames = []
        for i, fr in enumerate(self.raw):
            frames.append({
                "index": i,
                "tau": fr.tau,
                "camera": fr.camera.to_dict(),
                "image": f"images/{i:03d}.ppm",
                "depth": f"depth/{i:03d}.pfm",
                "depth_valid": f"depth/{i:03d}_valid.pgm",
                "sky_mask": f"masks/{i:03d}_sky.pgm",
                "dyn_mask": f"masks/{i:03d}_dyn.pgm",
            })
        return {
            "version": MANIFEST_VERSION,
            "frames": frames,
            "split": {"train": self.train_indices, "test": self.test_indices, "rule": "test = index mod 4 == 0"},
            "objects": [{"group": g, "points": f"points/object_{g}.csv"} for g in sorted(self.object_points)],
            "static_points": "points/static.csv",
            "gt_checkpoint": "gt/checkpoint.json" if self.gt_scene_path else None,
            "meta": self.meta,
        }

    def save(self, root: str) -> None:
        for sub in ("images", "depth", "masks", "points"):
            os.makedirs(os.path.join(root, sub), exist_ok=True)
        man = self.manifest()
        for entry, fr in zip(man["frames"], self.raw):
            write_ppm(os.path.join(root, entry["image"]), fr.image)
            write_pfm(os.path.join(root, entry["depth"]), fr.inv_depth)
            write_pgm(os.path.join(root, entry["depth_valid"]), fr.depth_valid)
            write_pgm(os.path.join(root, entry["sky_mask"]), fr.sky_mask)
            write_pgm(os.path.join(root, entry["dyn_mask"]), fr.dyn_mask)
        with open(os.path.join(root, "points", "static.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "r", "g", "b"])
            for p, c in zip(self.static_points, self.static_colors):
                w.writerow([_fmt(v) for v in (*p, *c)])
        for g, rows in sorted(self.object_points.items()):
            with open(os.path.join(root, "points", f"object_{g}.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["frame", "tau", "x", "y", "z", "r", "g", "b"])
                for r in rows:
                    w.writerow([str(int(r[0]))] + [_fmt(v) for v in r[1:]])
        if self.gt_scene_path:
            target = os.path.join(root, "gt", "checkpoint.json")
            if os.path.abspath(target) != os.path.abspath(self.gt_scene_path):
                from .scene import save_checkpoint

                save_checkpoint(load_checkpoint(self.gt_scene_path), target)
        with open(os.path.join(root, "manifest.json"), "w") as fh:
            json.dump(man, fh, sort_keys=True, indent=1)
            fh.write("\n")


def _read_csv(path: str, n_cols: int) -> np.ndarray:
    with open(path) as fh:
        text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))[1:]
    if not rows:
        return np.zeros((0, n_cols))
    return np.array([[float(v) for v in r] for r in rows], dtype=np.float64).reshape(-1, n_cols)


def load_dataset(root: str) -> Dataset:
    path = os.path.join(root, "manifest.json")
    if not os.path.exists(path):
        raise DatasetError(f"no manifest.json in {root}")
    with open(path) as fh:
        man = json.load(fh)
    if man.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"unsupported manifest version {man.get('version')!r}")
    frames = []
    for entry in man["frames"]:
        def p(key):
            return os.path.join(root, entry[key])

        try:
            frames.append(RawFrame(
                tau=float(entry["tau"]),
                camera=Camera.from_dict(entry["camera"]),
                image=read_ppm(p("image")),
                inv_depth=read_pfm(p("depth")),
                depth_valid=read_pgm(p("depth_valid")) > 127,
                sky_mask=read_pgm(p("sky_mask")) > 127,
                dyn_mask=read_pgm(p("dyn_mask")) > 127,
            ))
        except FileNotFoundError as exc:
            raise DatasetError(f"manifest references a missing file: {exc.filename}") from None
    static = _read_csv(os.path.join(root, man["static_points"]), 6)
    objects = {int(o["group"]): _read_csv(os.path.join(root, o["points"]), 8) for o in man["objects"]}
    gt = man.get("gt_checkpoint")
    return Dataset(
        frames, static[:, :3], static[:, 3:], objects, man.get("meta", {}),
        os.path.join(root, gt) if gt else None, root,
    )


def initial_scene(dataset: Dataset, sh_degree: int = 0, sky_resolution: int = 8):
    """Scene initialised from the dataset's point groups, with a grey sky."""
    from .scene import init_scene_from_groups
    from .sky import SkyCubemap

    return init_scene_from_groups(
        dataset.object_frames(), dataset.static_points, dataset.static_colors,
        sh_degree=sh_degree, sky=SkyCubemap.constant(sky_resolution),
    )
