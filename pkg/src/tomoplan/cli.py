"""Command-line front end: gen, build, plan, export, bench.

Exit codes: 0 success, 2 usage (including unsnappable endpoints), 3 I/O,
4 planning failure (no path), 5 optimization infeasible.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import planner, scenes, simplify, trajectory, traversability
from .cloud_io import CloudFormatError, FORMATS, load_cloud, save_cloud, sniff_format
from .config import ConfigError, load_config, write_default_config
from .tomogram import GridSizeError, build_tomogram, load_tomogram, save_tomogram

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PLAN = 4
EXIT_OPT = 5


def _parse_xyz(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 'x,y,z', got '{text}'")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _ms(seconds: float) -> str:
    return f"{seconds * 1000.0:.2f} ms"


def cmd_gen(args) -> int:
    try:
        spec = scenes.SceneSpec(
            kind=args.kind,
            dimensions=tuple(args.dims) if args.dims else (),
            density=args.density,
            noise_sigma=args.noise,
            seed=args.seed,
            turns=args.turns,
            rise_per_turn=args.rise,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    cloud = scenes.generate_scene(spec)
    fmt = args.format or sniff_format(args.out)
    try:
        save_cloud(cloud, args.out, fmt)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(cloud)} points to {args.out} ({fmt})")
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = load_config(args.config, args.param)
    fmt = args.format or sniff_format(args.cloud)
    cloud = load_cloud(args.cloud, fmt)
    if cloud.dropped:
        print(f"warning: dropped {cloud.dropped} non-finite points", file=sys.stderr)

    t0 = time.perf_counter()
    tom = build_tomogram(cloud, cfg.d_s, cfg.r_g, threads=cfg.threads)
    tp = time.perf_counter() - t0
    initial = len(tom.slices)

    t0 = time.perf_counter()
    tom = traversability.evaluate_tomogram(tom, cfg.trav, threads=cfg.threads)
    te = time.perf_counter() - t0

    t0 = time.perf_counter()
    tom = simplify.simplify_tomogram(tom, cfg.eps_e, cfg.trav.c_barrier)
    tsimp = time.perf_counter() - t0

    save_tomogram(tom, args.out)
    print(f"slices: {len(tom.slices)} (from {initial})")
    print(f"T_p (tomogram construction): {_ms(tp)}")
    print(f"T_e (traversability evaluation): {_ms(te)}")
    print(f"simplification: {_ms(tsimp)}")
    print(f"archive: {args.out} ({Path(args.out).stat().st_size / 1e6:.3f} MB)")
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = load_config(args.config, args.param)
    tom = load_tomogram(args.archive)
    out_prefix = Path(args.out_prefix)

    try:
        t0 = time.perf_counter()
        path = planner.plan_path(tom, args.start, args.goal, d_min=cfg.trav.d_min,
                                 eps_e=cfg.eps_e, c_barrier=cfg.trav.c_barrier)
        ts = time.perf_counter() - t0
    except planner.SnapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except planner.NoPathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PLAN

    planner.save_path_json(path, out_prefix.with_suffix(".path.json"))
    planner.save_path_csv(path, out_prefix.with_suffix(".path.csv"))
    print(f"T_s (path search): {_ms(ts)}")
    print(f"N_s (expanded nodes): {path.expanded}")
    print(f"path cost: {path.total_cost:.6f} over {len(path)} waypoints, "
          f"{len(set(path.slice_index.tolist()))} slice(s)")

    if args.no_smooth:
        return EXIT_OK
    try:
        t0 = time.perf_counter()
        traj = trajectory.optimize_trajectory(tom, path, cfg=cfg.opt)
        to = time.perf_counter() - t0
    except trajectory.TrajectoryError as exc:
        print(f"error: optimization failed: {exc}", file=sys.stderr)
        return EXIT_OPT
    trajectory.save_trajectory_json(traj, out_prefix.with_suffix(".traj.json"))
    trajectory.save_trajectory_csv(traj, out_prefix.with_suffix(".traj.csv"))
    print(f"T_o (trajectory optimization): {_ms(to)}")
    print(f"trajectory: {len(traj.pieces)} pieces, {traj.duration:.3f} s")
    return EXIT_OK


def cmd_export(args) -> int:
    tom = load_tomogram(args.archive)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.slice == "all":
        indices = range(len(tom.slices))
    else:
        k = int(args.slice)
        if not 0 <= k < len(tom.slices):
            print(f"error: slice index {k} out of range 0..{len(tom.slices) - 1}",
                  file=sys.stderr)
            return EXIT_USAGE
        indices = [k]

    c_barrier = args.c_barrier
    written = []
    if args.what == "costmap_pgm":
        for k in indices:
            sl = tom.slices[k]
            if sl.cost is None:
                print(f"error: slice {k} has no cost layer", file=sys.stderr)
                return EXIT_USAGE
            gray = traversability.cost_to_gray(sl.cost.values, c_barrier)
            out = out_dir / f"cost_{k:03d}.pgm"
            traversability.write_pgm(gray, out)
            written.append(out)
    elif args.what == "ground_pgm":
        for k in indices:
            sl = tom.slices[k]
            vals = sl.ground.values.astype(np.float64)
            valid = np.isfinite(vals)
            if valid.any():
                lo, hi = vals[valid].min(), vals[valid].max()
                span = (hi - lo) if hi > lo else 1.0
                gray = np.where(valid, 1 + np.rint(254 * (vals - lo) / span), 0)
            else:
                gray = np.zeros_like(vals)
            out = out_dir / f"ground_{k:03d}.pgm"
            traversability.write_pgm(gray.astype(np.uint8), out)
            written.append(out)
    else:  # merged_cloud: x y z cost per traversable cell across all slices
        out = out_dir / "merged_cloud.xyz"
        ox, oy = tom.origin
        res = tom.resolution
        with out.open("w") as f:
            f.write("# x y z cost\n")
            for k in indices:
                sl = tom.slices[k]
                if sl.cost is None:
                    print(f"error: slice {k} has no cost layer", file=sys.stderr)
                    return EXIT_USAGE
                trav = sl.ground.valid & (sl.cost.values < c_barrier)
                ii, jj = np.nonzero(trav)
                zz = sl.ground.values[ii, jj]
                cc = sl.cost.values[ii, jj]
                for i, j, z, c in zip(ii, jj, zz, cc):
                    f.write(f"{ox + j * res:.9g} {oy + i * res:.9g} {z:.9g} {c:.6g}\n")
        written.append(out)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = load_config(args.config, args.param)
    threads = [int(t) for t in args.threads_list.split(",")]
    rows = bench_mod.run_benchmark(args.scenes, cfg, threads, args.out_dir,
                                   render=not args.no_figures)
    print(bench_mod.format_table(rows))
    by_scene = {}
    for r in rows:
        by_scene.setdefault(r["scene"], set()).add(r["checksum"])
    for name, sums in sorted(by_scene.items()):
        status = "deterministic" if len(sums) == 1 else "MISMATCH"
        print(f"{name}: archive checksums across thread counts: {status}")
    print(f"metrics: {Path(args.out_dir) / 'metrics.csv'}")
    return EXIT_OK


def cmd_init_config(args) -> int:
    write_default_config(args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tomoplan",
        description="Point cloud tomogram slicing, traversability evaluation, and 3D planning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene point cloud")
    p.add_argument("--kind", required=True, choices=scenes.SCENE_KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--dims", type=float, nargs="*", help="per-kind dimensions in meters")
    p.add_argument("--density", type=float, default=400.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--turns", type=float, default=2.0)
    p.add_argument("--rise", type=float, default=3.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build, evaluate, and simplify a tomogram archive")
    p.add_argument("--cloud", required=True)
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--param", action="append", default=[],
                   help="override a config value: section.key=value")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("plan", help="plan a path and optimize a trajectory")
    p.add_argument("--archive", required=True)
    p.add_argument("--start", required=True, type=_parse_xyz)
    p.add_argument("--goal", required=True, type=_parse_xyz)
    p.add_argument("--out-prefix", default="plan")
    p.add_argument("--no-smooth", action="store_true")
    p.add_argument("--config")
    p.add_argument("--param", action="append", default=[])
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("export", help="export cost/ground images or a merged cloud")
    p.add_argument("--archive", required=True)
    p.add_argument("--what", required=True,
                   choices=("costmap_pgm", "ground_pgm", "merged_cloud"))
    p.add_argument("--slice", default="all", help="slice index or 'all'")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--c-barrier", type=float, default=50.0)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("bench", help="run the scene benchmark matrix")
    p.add_argument("--scenes", nargs="*", default=list(bench_mod.BENCH_SCENES),
                   choices=scenes.SCENE_KINDS)
    p.add_argument("--threads-list", default="1,8")
    p.add_argument("--out-dir", default="bench_out")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--config")
    p.add_argument("--param", action="append", default=[])
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("init-config", help="write a config file with the defaults")
    p.add_argument("--out", default="tomoplan.cfg")
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CloudFormatError, GridSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
