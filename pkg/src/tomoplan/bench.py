"""End-to-end benchmark across scenes and thread counts.

Reports the pipeline stage metrics (Tp, Size, Te, Ts, Ns, To, Tall) as a text
table and CSV, verifies cross-thread determinism via archive checksums, and
renders matplotlib figures (stage timings, per-scene cost maps) next to the
CSV.
"""

from __future__ import annotations

import hashlib
import time
from pathlib import Path

import numpy as np

from . import planner, scenes, simplify, trajectory, traversability
from .config import PipelineConfig
from .tomogram import build_tomogram, save_tomogram

BENCH_SCENES = ("flat_plane", "two_floor_building", "ramp_over_tunnel", "random_multilayer")

_ENDPOINTS = {
    "flat_plane": ((1.5, 1.5, 0.0), (-1.5, -1.5, 0.0)),          # offsets from corners
    "two_floor_building": ((2.0, 2.0, 0.0), (-2.0, -2.0, None)),  # None: top surface
    "ramp_over_tunnel": ((1.5, 1.5, 0.0), (-1.5, -1.5, 0.0)),
    "random_multilayer": ((1.2, 1.2, 0.0), (-1.2, -1.2, 0.0)),
}


def _scene_endpoints(kind: str, spec: scenes.SceneSpec):
    dims = spec.dimensions
    (sx, sy, sz), (gx, gy, gz) = _ENDPOINTS[kind]
    lx, ly = dims[0], dims[1]
    start = (sx if sx >= 0 else lx + sx, sy if sy >= 0 else ly + sy, sz or 0.0)
    top = dims[2] if len(dims) > 2 and gz is None else (gz or 0.0)
    goal = (gx if gx >= 0 else lx + gx, gy if gy >= 0 else ly + gy, top)
    return start, goal


def _ms(seconds: float) -> float:
    return round(seconds * 1000.0, 2)


def run_scene(kind: str, cfg: PipelineConfig, threads: int, out_dir: Path, seed: int = 11):
    spec = scenes.SceneSpec(kind=kind, density=300.0, noise_sigma=0.005, seed=seed)
    cloud = scenes.generate_scene(spec)

    t0 = time.perf_counter()
    tom = build_tomogram(cloud, cfg.d_s, cfg.r_g, threads=threads)
    tp = time.perf_counter() - t0

    t0 = time.perf_counter()
    tom = traversability.evaluate_tomogram(tom, cfg.trav, threads=threads)
    te = time.perf_counter() - t0

    tom = simplify.simplify_tomogram(tom, cfg.eps_e, cfg.trav.c_barrier)
    archive = out_dir / f"{kind}_t{threads}.lga"
    save_tomogram(tom, archive)
    blob = archive.read_bytes()
    size_mb = len(blob) / 1e6
    checksum = hashlib.sha256(blob).hexdigest()[:16]

    start, goal = _scene_endpoints(kind, spec)
    ts_ms = ns = to_ms = None
    duration = None
    try:
        t0 = time.perf_counter()
        path = planner.plan_path(tom, start, goal, d_min=cfg.trav.d_min,
                                 eps_e=cfg.eps_e, c_barrier=cfg.trav.c_barrier)
        ts_ms = _ms(time.perf_counter() - t0)
        ns = path.expanded
        t0 = time.perf_counter()
        traj = trajectory.optimize_trajectory(tom, path, cfg=cfg.opt)
        to_ms = _ms(time.perf_counter() - t0)
        duration = traj.duration
    except (planner.PlanningError, trajectory.TrajectoryError) as exc:
        note = f"{type(exc).__name__}"
    else:
        note = ""

    return {
        "scene": kind,
        "threads": threads,
        "Tp": _ms(tp),
        "Size": round(size_mb, 3),
        "Te": _ms(te),
        "Ts": ts_ms if ts_ms is not None else "",
        "Ns": ns if ns is not None else "",
        "To": to_ms if to_ms is not None else "",
        "Tall": _ms(tp + te + (ts_ms or 0) / 1000.0 + (to_ms or 0) / 1000.0),
        "checksum": checksum,
        "note": note,
        "_tomogram": tom,
        "_duration": duration,
    }


def write_csv(rows: list[dict], path: Path):
    cols = ["scene", "threads", "Tp", "Size", "Te", "Ts", "Ns", "To", "Tall", "checksum"]
    with path.open("w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(str(row[c]) for c in cols) + "\n")


def format_table(rows: list[dict]) -> str:
    cols = ["scene", "threads", "Tp", "Size", "Te", "Ts", "Ns", "To", "Tall", "checksum"]
    widths = {c: max(len(c), max((len(str(r[c])) for r in rows), default=0)) for c in cols}
    lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(widths[c]) for c in cols))
    return "\n".join(lines)


def render_figures(rows: list[dict], out_dir: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_scene = {}
    for r in rows:
        by_scene.setdefault(r["scene"], r)   # first thread-count row per scene

    fig, ax = plt.subplots(figsize=(8, 4.5))
    names = list(by_scene)
    stages = ["Tp", "Te", "Ts", "To"]
    x = np.arange(len(names))
    width = 0.2
    for s_idx, stage in enumerate(stages):
        vals = [float(by_scene[n][stage] or 0.0) for n in names]
        ax.bar(x + (s_idx - 1.5) * width, vals, width, label=f"{stage} [ms]")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("time [ms]")
    ax.set_title("pipeline stage timings")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "bench_times.png", dpi=130)
    plt.close(fig)

    for name, row in by_scene.items():
        tom = row["_tomogram"]
        k = min(len(tom.slices) - 1, 0)
        cost = tom.slices[k].cost.values
        fig, ax = plt.subplots(figsize=(5, 4.5))
        im = ax.imshow(cost, origin="lower", cmap="viridis_r")
        fig.colorbar(im, ax=ax, label="travel cost")
        ax.set_title(f"{name}: cost map, slice {k} (of {len(tom.slices)})")
        fig.tight_layout()
        fig.savefig(out_dir / f"bench_cost_{name}.png", dpi=130)
        plt.close(fig)


def run_benchmark(scene_kinds, cfg: PipelineConfig, thread_counts, out_dir,
                  render: bool = True) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in scene_kinds:
        for threads in thread_counts:
            rows.append(run_scene(kind, cfg, threads, out_dir))
    write_csv(rows, out_dir / "metrics.csv")
    if render:
        render_figures(rows, out_dir)
    return rows
