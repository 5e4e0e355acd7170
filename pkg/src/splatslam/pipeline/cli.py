"""Command-line entry point: run, render, eval, export-ply, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..images import save_png
from ..mapping.gaussians import export_point_cloud_ply, import_ply, sigmoid
from ..raster import RasterConfig, render
from .config import load_config
from .metrics import ate_rmse, psnr, ssim
from .run import run_pipeline
from .synthetic import desk_scene, fronto_parallel_plane, generate_synthetic, smooth_trajectory, write_sequence
from .tum import load_tum_sequence, read_trajectory


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. mapper.control.interval=500 (repeatable)")


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    seq = load_tum_sequence(args.sequence, sort=args.sort)
    result = run_pipeline(seq, cfg, seed=args.seed, out_dir=args.out)
    print(result.report.to_json())
    return 0


def _trajectory_poses(run_dir: Path):
    return read_trajectory(run_dir / "trajectory.txt")


def cmd_render(args) -> int:
    seq = load_tum_sequence(args.sequence, sort=args.sort)
    gmap = import_ply(args.run / "map.ply")
    traj = _trajectory_poses(args.run)
    out = args.out or args.run / "renders"
    out.mkdir(parents=True, exist_ok=True)
    for i in range(0, len(traj), args.every):
        ts, pose = traj[i]
        save_png(out / f"{i:06d}.png", render(gmap, pose, seq.cam, RasterConfig()).image)
    print(f"wrote {len(range(0, len(traj), args.every))} renders to {out}")
    return 0


def cmd_eval(args) -> int:
    seq = load_tum_sequence(args.sequence, sort=args.sort)
    gmap = import_ply(args.run / "map.ply")
    traj = _trajectory_poses(args.run)
    rows = []
    for i in range(0, min(len(traj), len(seq)), args.every):
        img = render(gmap, traj[i][1], seq.cam, RasterConfig()).image
        gt = seq.image(i)
        gt = np.repeat(gt[..., None], 3, axis=2) if gt.ndim == 2 else gt
        rows.append((psnr(img, gt), ssim(img, gt)))
    out = {"frames": len(rows),
           "psnr": float(np.mean([r[0] for r in rows])) if rows else None,
           "ssim": float(np.mean([r[1] for r in rows])) if rows else None,
           "ate_rmse": ate_rmse(traj, seq.gt_trajectory) if seq.has_groundtruth else None,
           "gaussian_count": len(gmap),
           "map_size_bytes": (args.run / "map.ply").stat().st_size}
    print(json.dumps(out, indent=2))
    return 0


def cmd_export_ply(args) -> int:
    gmap = import_ply(args.map)
    keep = sigmoid(gmap.opacity_logits) >= args.min_opacity
    export_point_cloud_ply(gmap.means[keep], gmap.colors[keep], args.out)
    print(f"wrote {int(keep.sum())} points to {args.out}")
    return 0


def cmd_synth(args) -> int:
    if args.scene == "plane":
        scene = fronto_parallel_plane(depth=2.0, seed=args.seed)
    else:
        scene = desk_scene(args.seed)
    poses = smooth_trajectory(args.frames, seed=args.seed, radius=args.radius, max_angle_deg=args.max_angle,
                              static=args.static)
    seq = generate_synthetic(scene, args.frames, args.width, args.height, poses=poses, fps=args.fps,
                             seed=args.seed, noise=args.noise)
    out = write_sequence(seq, args.out)
    print(f"wrote {args.frames} frames to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatslam", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="track a sequence and build a Gaussian map")
    p.add_argument("sequence", type=Path, help="TUM-style directory with rgb.txt")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sort", action="store_true", help="re-sort out-of-order timestamps instead of failing")
    _config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("render", help="render a finished run along its trajectory")
    p.add_argument("run", type=Path)
    p.add_argument("sequence", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--every", type=int, default=1)
    p.add_argument("--sort", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="recompute metrics of a finished run")
    p.add_argument("run", type=Path)
    p.add_argument("sequence", type=Path)
    p.add_argument("--every", type=int, default=5)
    p.add_argument("--sort", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-ply", help="convert a map to a plain colored point cloud")
    p.add_argument("map", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--min-opacity", type=float, default=0.0)
    p.set_defaults(func=cmd_export_ply)

    p = sub.add_parser("synth", help="write a synthetic textured-plane sequence")
    p.add_argument("out", type=Path)
    p.add_argument("--scene", choices=["desk", "plane"], default="desk")
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--radius", type=float, default=0.3, help="translation amplitude over the whole sequence")
    p.add_argument("--max-angle", type=float, default=4.0, help="rotation amplitude in degrees over the whole sequence")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--static", action="store_true")
    p.add_argument("--noise", type=float, default=0.0, help="std of Gaussian intensity noise")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
