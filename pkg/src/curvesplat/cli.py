"""Command-line entry point.

    curvesplat [--seed N] [--threads N] [--precision f32|f64] <command> ...

    gen <spec.json|demo> <out>         synthesize a dataset with ground truth
    fit <points.csv> <out>             fit a center curve and time mapping
    train <dataset> <config> <out>     optimise a scene initialised from the dataset
    render <checkpoint> <cameras> <out>
    eval <run> <dataset> [--out DIR]   metrics, trajectory errors and figures
    gradcheck                          finite-difference check of all gradients

Errors print one line to stderr and exit non-zero; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from importlib import resources

import numpy as np

log = logging.getLogger("curvesplat")


class CLIError(Exception):
    pass


def _demo_spec_path() -> str:
    return str(resources.files("curvesplat").joinpath("data", "demo_spec.json"))


# ------------------------------------------------------------------ commands


def cmd_gen(args) -> int:
    from .synthetic import generate, load_spec

    spec = load_spec(_demo_spec_path() if args.spec == "demo" else args.spec)
    ds = generate(spec, args.out, seed=args.seed)
    print(f"wrote {len(ds)} frames ({len(ds.train_indices)} train, {len(ds.test_indices)} test) to {args.out}")
    return 0


def _read_track_csv(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise CLIError(f"{path}:{lineno}: expected numbers, got {row}") from None
            if len(vals) != 4:
                raise CLIError(f"{path}:{lineno}: expected tau,x,y,z")
            rows.append(vals)
    return np.array(rows).reshape(-1, 4)


def cmd_fit(args) -> int:
    from .bezier import evaluate
    from .fitting import fit, fit_time_mapping, is_monotone

    data = _read_track_csv(args.csv)
    data = data[np.argsort(data[:, 0], kind="stable")]
    tau, pts = data[:, 0], data[:, 1:]
    result = fit(pts, args.degree)
    tcurve = fit_time_mapping(tau, result.params, args.time_degree)
    os.makedirs(args.out, exist_ok=True)
    doc = {
        "center_curve": result.curve.to_dict(),
        "time_curve": tcurve.to_dict(),
        "tau_range": [float(tau[0]), float(tau[-1])],
        "monotone": bool(is_monotone(tcurve)),
        "residual": float(result.residual),
        "iterations": int(result.iterations),
    }
    with open(os.path.join(args.out, "curve.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(os.path.join(args.out, "residuals.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "t", "x", "y", "z", "distance"])
        for ta, t, p in zip(tau, result.params, pts):
            d = float(np.linalg.norm(evaluate(result.curve, float(t)) - p))
            w.writerow([repr(float(ta)), repr(float(t)), *(repr(float(v)) for v in p), repr(d)])
    print(f"degree {args.degree} fit of {len(pts)} points: rms residual {result.residual:.6g}")
    return 0


def cmd_train(args) -> int:
    from .config import load_config
    from .dataset import initial_scene, load_dataset
    from .optim import train

    ds = load_dataset(args.dataset)
    cfg = load_config(args.config)
    overrides = {}
    if args.seed_given:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if overrides:
        cfg = cfg.replace(**overrides)
    scene = initial_scene(ds, cfg.sh_degree, cfg.sky_resolution)
    if args.precision == "f32":
        scene = scene.astype(np.float32)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    every = max(cfg.iterations // 20, 1)

    def progress(it, row):
        if (it + 1) % every == 0:
            log.info("iter %d  loss %.5f  static %d  dynamic %d", it + 1, row["total"], row["n_static"], row["n_dynamic"])

    result = train(ds, scene, cfg, out_dir=args.out, progress=progress)
    print(f"trained {cfg.iterations} iterations; pruned {result.pruned}; checkpoint in {args.out}")
    return 0


def _load_cameras(path: str) -> list:
    from .raster import Camera

    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and "frames" in doc:  # a dataset manifest
        doc = [f["camera"] for f in doc["frames"]]
    if isinstance(doc, dict):
        doc = [doc]
    try:
        return [Camera.from_dict(d) for d in doc]
    except (KeyError, TypeError) as exc:
        raise CLIError(f"{path}: not a camera description ({exc})") from None


def cmd_render(args) -> int:
    from .imageio import write_pfm, write_ppm
    from .raster import RenderSettings, render
    from .scene import gather_renderables, load_checkpoint

    scene = load_checkpoint(args.checkpoint)
    cams = _load_cameras(args.cameras)
    settings = RenderSettings(threads=args.threads or 1)
    os.makedirs(args.out, exist_ok=True)
    for i, cam in enumerate(cams):
        prims, _ = gather_renderables(scene, cam.tau)
        maps = render(prims, cam, scene.sky, "all", settings)
        dyn = render(prims, cam, scene.sky, "dynamic", settings)
        write_ppm(os.path.join(args.out, f"{i:03d}.ppm"), np.clip(maps.color, 0, 1))
        write_pfm(os.path.join(args.out, f"{i:03d}_depth.pfm"), maps.depth)
        write_pfm(os.path.join(args.out, f"{i:03d}_opacity.pfm"), maps.opacity)
        write_pfm(os.path.join(args.out, f"{i:03d}_velocity.pfm"), dyn.velocity)
    print(f"rendered {len(cams)} views to {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .dataset import load_dataset
    from .evaluate import evaluate_run, format_table
    from .raster import RenderSettings

    ds = load_dataset(args.dataset)
    out = args.out or os.path.join(args.run, "eval")
    res = evaluate_run(args.run, ds, out, RenderSettings(threads=args.threads or 1), figures=not args.no_figures)
    sys.stdout.write(format_table(res))
    print(f"results in {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .losses import LossWeights
    from .optim import scene_fd_check
    from .randomscene import random_frame, random_scene, small_camera

    if args.precision != "f64":
        raise CLIError("gradcheck needs --precision f64")
    worst = 0.0
    for k in range(args.scenes):
        rng = np.random.default_rng(args.seed + k)
        scene = random_scene(rng)
        frame = random_frame(rng, small_camera(args.size))
        rep = scene_fd_check(scene, frame, LossWeights(), h=args.h, seed=args.seed + k)
        worst = max(worst, rep.worst())
        for name, err in rep.errors.items():
            print(f"scene {k}  {name:18s} {err:.3e}  ({rep.samples[name]} samples)")
    ok = worst < args.tol
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAILED'}, tolerance {args.tol:g})")
    return 0 if ok else 1


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curvesplat", description="Dynamic Gaussian scenes with Bezier trajectories.")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=None, help="tile worker threads")
    p.add_argument("--precision", choices=("f32", "f64"), default="f64", help="parameter storage precision")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", metavar="command")

    s = sub.add_parser("gen", help="generate a synthetic dataset")
    s.add_argument("spec", help="scene spec JSON, or 'demo' for the bundled scene")
    s.add_argument("out")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("fit", help="fit a Bezier trajectory to a tau,x,y,z CSV")
    s.add_argument("csv")
    s.add_argument("out")
    s.add_argument("--degree", type=int, default=3)
    s.add_argument("--time-degree", type=int, default=3)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("train", help="train a scene on a dataset")
    s.add_argument("dataset")
    s.add_argument("config", help="JSON or key = value file")
    s.add_argument("out")
    s.add_argument("--iterations", type=int, default=None, help="override the config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render a checkpoint from given cameras")
    s.add_argument("checkpoint")
    s.add_argument("cameras", help="camera JSON (object or list) or a dataset manifest")
    s.add_argument("out")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="evaluate a training run")
    s.add_argument("run")
    s.add_argument("dataset")
    s.add_argument("--out", default=None, help="output directory (default <run>/eval)")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check on random scenes")
    s.add_argument("--scenes", type=int, default=5)
    s.add_argument("--size", type=int, default=16)
    s.add_argument("--h", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if args.threads is not None and args.threads < 1:
        print("curvesplat: error: --threads must be >= 1", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("curvesplat: interrupted", file=sys.stderr)
        return 130
    except (CLIError, ValueError, OSError, RuntimeError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"curvesplat: error: {msg}", file=sys.stderr)
        return 1
