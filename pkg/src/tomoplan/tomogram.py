"""Tomogram construction: ground/ceiling elevation pairs on equidistant planes.

Each cutting plane splits the cloud into a lower and an upper group; the
ground layer keeps the highest point at-or-below the plane per cell, the
ceiling layer the lowest point strictly above. Values are float32 grids with
NaN marking cells that received no points. The build is order- and
thread-count-independent because it only uses max/min reductions.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud_io import PointCloud

GRID_SIDE_LIMIT = 16384


class GridSizeError(ValueError):
    """Grid dimensions exceed the configured safety limit."""


@dataclass
class Layer:
    """Dense 2D elevation grid; NaN = invalid. Row i follows y, column j follows x."""

    values: np.ndarray                 # (rows, cols) float32
    resolution: float
    origin: tuple[float, float]        # world (x, y) of cell (0, 0) center

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ValueError("layer grid must be 2D and non-empty")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def shape(self):
        return self.values.shape

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def like(self, values: np.ndarray) -> "Layer":
        return Layer(values, self.resolution, self.origin)


@dataclass
class TomogramSlice:
    ground: Layer
    ceiling: Layer
    plane_height: float
    index: int
    cost: Layer | None = None


@dataclass
class Tomogram:
    slices: list[TomogramSlice]
    d_s: float
    z_min: float

    @property
    def rows(self):
        return self.slices[0].ground.shape[0]

    @property
    def cols(self):
        return self.slices[0].ground.shape[1]

    @property
    def resolution(self):
        return self.slices[0].ground.resolution

    @property
    def origin(self):
        return self.slices[0].ground.origin

    def ground_stack(self) -> np.ndarray:
        return np.stack([s.ground.values for s in self.slices])

    def ceiling_stack(self) -> np.ndarray:
        return np.stack([s.ceiling.values for s in self.slices])

    def cost_stack(self) -> np.ndarray:
        if any(s.cost is None for s in self.slices):
            raise ValueError("tomogram has no cost layers; run evaluate_tomogram first")
        return np.stack([s.cost.values for s in self.slices])


def rasterize_index(p, origin, r_g: float, shape: tuple[int, int] | None = None):
    """Map a point to (row, col) with the nearest-cell-center convention.

    i = floor((y - y0) / r_g + 0.5), j = floor((x - x0) / r_g + 0.5).
    With `shape` given, indices outside the grid raise IndexError.
    """
    if r_g <= 0:
        raise ValueError("r_g must be positive")
    x, y = float(p[0]), float(p[1])
    i = math.floor((y - origin[1]) / r_g + 0.5)
    j = math.floor((x - origin[0]) / r_g + 0.5)
    if shape is not None and not (0 <= i < shape[0] and 0 <= j < shape[1]):
        raise IndexError(f"point ({x}, {y}) rasterizes to ({i}, {j}), outside grid {shape}")
    return i, j


def _partial_ranges(lo: int, hi: int, parts: int):
    """Deterministic contiguous split of [lo, hi) into `parts` ranges."""
    n = hi - lo
    out = []
    for t in range(parts):
        a = lo + (n * t) // parts
        b = lo + (n * (t + 1)) // parts
        if b > a:
            out.append((a, b))
    return out


def build_tomogram(cloud: PointCloud, d_s: float, r_g: float, threads: int = 1,
                   max_grid_side: int = GRID_SIDE_LIMIT) -> Tomogram:
    """Project the cloud onto planes at z_min + (k+1)*d_s and build all slices.

    The result is bitwise identical for any point permutation and any thread
    count: per-thread partial grids are combined with max/min merges.
    """
    if d_s <= 0 or r_g <= 0:
        raise ValueError("d_s and r_g must be positive")
    threads = max(1, int(threads))
    (x_min, y_min, z_min), (x_max, y_max, z_max) = cloud.bounds
    origin = (float(x_min), float(y_min))
    rows = math.floor((y_max - y_min) / r_g + 0.5) + 2   # one cell of padding
    cols = math.floor((x_max - x_min) / r_g + 0.5) + 2
    if rows > max_grid_side or cols > max_grid_side:
        raise GridSizeError(f"grid {rows}x{cols} exceeds the {max_grid_side} per-side limit")

    n_slices = max(1, math.ceil((z_max - z_min) / d_s - 1e-9))
    heights = z_min + d_s * (np.arange(n_slices, dtype=np.float64) + 1.0)

    xy = cloud.xyz
    i_idx = np.floor((xy[:, 1] - y_min) / r_g + 0.5).astype(np.int64)
    j_idx = np.floor((xy[:, 0] - x_min) / r_g + 0.5).astype(np.int64)
    cells = i_idx * cols + j_idx

    order = np.argsort(xy[:, 2], kind="stable")
    z_sorted = xy[order, 2]
    cells_sorted = cells[order]
    z32 = z_sorted.astype(np.float32)
    # first index with z > h_k; points at exactly h_k join the lower group
    split = np.searchsorted(z_sorted, heights, side="right")

    n_cells = rows * cols
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def reduce_pass(chunks, ufunc, merge, init):
        """Run ufunc.at over point chunks, one partial grid per thread slot."""
        partials = [np.full(n_cells, init, dtype=np.float32) for _ in range(threads)]
        snapshots = []
        for lo, hi in chunks:
            if hi > lo:
                ranges = _partial_ranges(lo, hi, threads)
                if pool is not None and len(ranges) > 1:
                    futs = [
                        pool.submit(ufunc.at, partials[t], cells_sorted[a:b], z32[a:b])
                        for t, (a, b) in enumerate(ranges)
                    ]
                    for f in futs:
                        f.result()
                else:
                    for t, (a, b) in enumerate(ranges):
                        ufunc.at(partials[t], cells_sorted[a:b], z32[a:b])
            snap = partials[0].copy()
            for t in range(1, threads):
                merge(snap, partials[t], out=snap)
            snapshots.append(snap)
        return snapshots

    ground_chunks = [(0 if k == 0 else int(split[k - 1]), int(split[k])) for k in range(n_slices)]
    ground_snaps = reduce_pass(ground_chunks, np.maximum, np.maximum, np.float32(-np.inf))

    n_pts = len(cloud)
    ceiling_chunks = [
        (int(split[k]), n_pts if k == n_slices - 1 else int(split[k + 1]))
        for k in range(n_slices - 1, -1, -1)
    ]
    ceiling_snaps = reduce_pass(ceiling_chunks, np.minimum, np.minimum, np.float32(np.inf))
    ceiling_snaps.reverse()

    if pool is not None:
        pool.shutdown()

    slices = []
    for k in range(n_slices):
        g = ground_snaps[k]
        c = ceiling_snaps[k]
        gv = np.where(np.isfinite(g), g, np.float32(np.nan)).reshape(rows, cols)
        cv = np.where(np.isfinite(c), c, np.float32(np.nan)).reshape(rows, cols)
        slices.append(
            TomogramSlice(
                ground=Layer(gv, r_g, origin),
                ceiling=Layer(cv, r_g, origin),
                plane_height=float(heights[k]),
                index=k,
            )
        )
    return Tomogram(slices=slices, d_s=float(d_s), z_min=float(z_min))


# ---------------------------------------------------------------------------
# LGA archive ("layered grid archive"), little-endian, bit-exact round trip

_MAGIC = b"LGA1"
_HEADER = struct.Struct("<4sIIIfdddfI")
_SLICE_HEADER = struct.Struct("<dB")

MASK_GROUND = 1
MASK_CEILING = 2
MASK_COST = 4


def save_tomogram(tomogram: Tomogram, path):
    """Serialize to the LGA format (see format notes in the README)."""
    buf = bytearray()
    ox, oy = tomogram.origin
    buf += _HEADER.pack(
        _MAGIC, 1, tomogram.rows, tomogram.cols,
        np.float32(tomogram.resolution), float(ox), float(oy),
        float(tomogram.z_min), np.float32(tomogram.d_s), len(tomogram.slices),
    )
    for sl in tomogram.slices:
        mask = MASK_GROUND | MASK_CEILING | (MASK_COST if sl.cost is not None else 0)
        buf += _SLICE_HEADER.pack(float(sl.plane_height), mask)
        buf += np.ascontiguousarray(sl.ground.values, dtype="<f4").tobytes()
        buf += np.ascontiguousarray(sl.ceiling.values, dtype="<f4").tobytes()
        if sl.cost is not None:
            buf += np.ascontiguousarray(sl.cost.values, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_tomogram(path) -> Tomogram:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:4] != _MAGIC:
        raise ValueError(f"{path}: not an LGA archive")
    magic, version, rows, cols, res, ox, oy, z_min, d_s, count = _HEADER.unpack_from(data, 0)
    if version != 1:
        raise ValueError(f"{path}: unsupported LGA version {version}")
    offset = _HEADER.size
    cell_bytes = rows * cols * 4
    origin = (ox, oy)
    slices = []
    for k in range(count):
        plane_height, mask = _SLICE_HEADER.unpack_from(data, offset)
        offset += _SLICE_HEADER.size

        def read_layer():
            nonlocal offset
            arr = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset)
            offset += cell_bytes
            return Layer(arr.reshape(rows, cols).copy(), float(res), origin)

        ground = read_layer() if mask & MASK_GROUND else None
        ceiling = read_layer() if mask & MASK_CEILING else None
        cost = read_layer() if mask & MASK_COST else None
        if ground is None or ceiling is None:
            raise ValueError(f"{path}: slice {k} is missing ground or ceiling layer")
        slices.append(TomogramSlice(ground, ceiling, float(plane_height), k, cost))
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return Tomogram(slices=slices, d_s=float(d_s), z_min=float(z_min))
