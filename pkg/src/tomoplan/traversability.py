"""Per-slice travel cost maps: interval cost, terrain cost, fusion, inflation.

Costs live in [0, c_barrier]; c_barrier marks untraversable cells. Cells with
no ground data are treated as barriers (unknown space is unsafe) and take
part in inflation like any other barrier.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .tomogram import Layer, Tomogram, TomogramSlice


@dataclass(frozen=True)
class TravParams:
    """Thresholds and weights of the traversability model (Table-defaults)."""

    d_min: float = 0.50        # minimum ground-ceiling interval, m
    d_ref: float = 0.65        # preferred operating clearance, m
    theta_b: float = 1.70      # barrier slope threshold, rise/run
    theta_s: float = 0.36      # gentle-surface slope threshold, rise/run
    theta_p: float = 0.20      # required fraction of gentle neighbors
    c_barrier: float = 50.0
    alpha_d: float = 20.0
    alpha_b: float = 20.0
    alpha_s: float = 15.0
    d_inf: float = 0.20        # obstacle inflation radius, m
    d_sm: float = 0.40         # safe margin radius, m
    r_c: float = 0.20          # robot collision radius, m
    step_patch_radius: int | None = None   # cells; None -> ceil(0.3 / r_g)

    def __post_init__(self):
        if not (0 < self.d_min <= self.d_ref):
            raise ValueError("need 0 < d_min <= d_ref")
        if not (0 < self.theta_s <= self.theta_b):
            raise ValueError("need 0 < theta_s <= theta_b")
        if not (0 <= self.theta_p <= 1):
            raise ValueError("theta_p must lie in [0, 1]")
        if self.c_barrier <= 0:
            raise ValueError("c_barrier must be positive")
        if not (self.d_inf < self.d_sm):
            raise ValueError("need d_inf < d_sm")
        if self.d_inf < self.r_c:
            raise ValueError("inflation radius must cover the collision radius")

    def patch_radius(self, r_g: float) -> int:
        if self.step_patch_radius is not None:
            return int(self.step_patch_radius)
        return int(math.ceil(0.3 / r_g))


def interval_cost(ground: Layer, ceiling: Layer, params: TravParams) -> np.ndarray:
    """Clearance cost per cell. Open sky costs 0; missing ground is a barrier."""
    if ground.shape != ceiling.shape:
        raise ValueError("ground and ceiling layers are misaligned")
    gv = ground.valid
    cv = ceiling.valid
    both = gv & cv
    d_i = np.where(both,
                   ceiling.values.astype(np.float64) - ground.values.astype(np.float64),
                   np.inf)
    adapt = np.maximum(0.0, params.alpha_d * (params.d_ref - d_i))
    cost = np.where(d_i < params.d_min, params.c_barrier, adapt)
    cost = np.where(cv, cost, 0.0)       # no ceiling recorded: nothing overhead
    cost = np.where(gv, cost, params.c_barrier)
    return cost.astype(np.float32)


def _axis_gradient(e, valid, r_g, axis):
    """Central difference where both neighbors are valid, one-sided otherwise."""
    ef = np.where(valid, e.astype(np.float64), 0.0)

    def shifted(arr, off, fill):
        out = np.full_like(arr, fill)
        src = [slice(None)] * arr.ndim
        dst = [slice(None)] * arr.ndim
        if off > 0:
            src[axis] = slice(off, None)
            dst[axis] = slice(None, -off)
        else:
            src[axis] = slice(None, off)
            dst[axis] = slice(-off, None)
        out[tuple(dst)] = arr[tuple(src)]
        return out

    e_next = shifted(ef, +1, 0.0)
    e_prev = shifted(ef, -1, 0.0)
    v_next = shifted(valid, +1, False)
    v_prev = shifted(valid, -1, False)

    g = np.zeros_like(ef)
    both = v_next & v_prev
    g = np.where(both, (e_next - e_prev) / (2.0 * r_g), g)
    g = np.where(v_next & ~v_prev, (e_next - ef) / r_g, g)
    g = np.where(v_prev & ~v_next, (ef - e_prev) / r_g, g)
    return g, v_next | v_prev


def slope_magnitudes(ground: Layer) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (m_xy, m_grad, isolated) for the valid cells of a ground layer."""
    valid = ground.valid
    gx, has_x = _axis_gradient(ground.values, valid, ground.resolution, axis=1)
    gy, has_y = _axis_gradient(ground.values, valid, ground.resolution, axis=0)
    m_xy = np.maximum(np.abs(gx), np.abs(gy))
    m_grad = np.hypot(gx, gy)
    isolated = valid & ~(has_x | has_y)
    return m_xy, m_grad, isolated


def gentle_fraction(gentle: np.ndarray, radius: int) -> np.ndarray:
    """Fraction of gentle cells in the (2r+1)^2 window; outside counts as not gentle."""
    side = 2 * radius + 1
    rows, cols = gentle.shape
    ii = np.zeros((rows + 1, cols + 1), dtype=np.int64)
    np.cumsum(np.cumsum(gentle.astype(np.int64), axis=0), axis=1, out=ii[1:, 1:])
    r0 = np.clip(np.arange(rows) - radius, 0, rows)
    r1 = np.clip(np.arange(rows) + radius + 1, 0, rows)
    c0 = np.clip(np.arange(cols) - radius, 0, cols)
    c1 = np.clip(np.arange(cols) + radius + 1, 0, cols)
    counts = (ii[r1][:, c1] - ii[r1][:, c0] - ii[r0][:, c1] + ii[r0][:, c0])
    return counts / float(side * side)


def terrain_cost_values(m_xy, m_grad, p_s, params: TravParams) -> np.ndarray:
    """Branch logic of the slope cost; inputs may be scalars or arrays."""
    m_xy = np.asarray(m_xy, dtype=np.float64)
    m_grad = np.asarray(m_grad, dtype=np.float64)
    p_s = np.asarray(p_s, dtype=np.float64)
    steppable = np.where(
        p_s > params.theta_p,
        params.alpha_b * (m_xy / params.theta_b) ** 2,
        params.c_barrier,
    )
    gentle = params.alpha_s * (m_grad / params.theta_s) ** 2
    cost = np.where(
        m_xy > params.theta_b,
        params.c_barrier,
        np.where(m_grad < params.theta_s, gentle, steppable),
    )
    return cost


def ground_cost(ground: Layer, params: TravParams) -> np.ndarray:
    """Terrain condition cost from the ground layer gradients."""
    valid = ground.valid
    m_xy, m_grad, isolated = slope_magnitudes(ground)
    gentle = valid & (m_grad < params.theta_s)
    p_s = gentle_fraction(gentle, params.patch_radius(ground.resolution))
    cost = terrain_cost_values(m_xy, m_grad, p_s, params)
    cost = np.where(isolated, params.c_barrier, cost)
    cost = np.where(valid, cost, 0.0)
    return cost.astype(np.float32)


def fuse_costs(c_interval: np.ndarray, c_ground: np.ndarray, ground_valid: np.ndarray,
               params: TravParams) -> np.ndarray:
    """Clipped sum of the two cost sources; invalid ground stays a barrier."""
    total = np.minimum(
        np.float64(params.c_barrier),
        c_interval.astype(np.float64) + c_ground.astype(np.float64),
    )
    total = np.where(ground_valid, total, params.c_barrier)
    return total.astype(np.float32)


@dataclass
class InflationKernel:
    """Radially decaying weights; side = 2*ceil(d_sm/r_g) + 1, float32."""

    weights: np.ndarray
    resolution: float

    @property
    def radius_cells(self) -> int:
        return self.weights.shape[0] // 2

    def weight_classes(self):
        """Distinct positive weights with their cell footprints, largest first."""
        classes = []
        for w in np.unique(self.weights)[::-1]:
            if w <= 0:
                continue
            classes.append((np.float32(w), self.weights == w))
        return classes


def build_kernel(d_inf: float, d_sm: float, r_g: float) -> InflationKernel:
    """Inflation kernel weights from center distance: full inside d_inf, then a linear falloff."""
    if not (r_g <= d_inf < d_sm):
        raise ValueError("need r_g <= d_inf < d_sm")
    radius = int(math.ceil(d_sm / r_g))
    offs = np.arange(-radius, radius + 1, dtype=np.float64) * r_g
    d = np.hypot(offs[:, None], offs[None, :])
    w = np.maximum(0.0, np.minimum(1.0 - (d - d_inf) / (d_sm - r_g), 1.0))
    return InflationKernel(w.astype(np.float32), float(r_g))


def inflate(cost: np.ndarray, kernel: InflationKernel) -> np.ndarray:
    """Sliding-window weighted maximum; cells outside the map contribute nothing."""
    cost = np.asarray(cost, dtype=np.float32)
    out = np.zeros_like(cost)
    for w, footprint in kernel.weight_classes():
        local_max = ndimage.maximum_filter(cost, footprint=footprint,
                                           mode="constant", cval=0.0)
        np.maximum(out, w * local_max, out=out)
    return out


def evaluate_slice(sl: TomogramSlice, params: TravParams,
                   kernel: InflationKernel | None = None) -> TomogramSlice:
    if kernel is None:
        kernel = build_kernel(params.d_inf, params.d_sm, sl.ground.resolution)
    c_i = interval_cost(sl.ground, sl.ceiling, params)
    c_g = ground_cost(sl.ground, params)
    c_init = fuse_costs(c_i, c_g, sl.ground.valid, params)
    c_t = inflate(c_init, kernel)
    return replace(sl, cost=sl.ground.like(c_t))


def evaluate_tomogram(tomogram: Tomogram, params: TravParams, threads: int = 1) -> Tomogram:
    """Fill every slice's cost layer. Slices are independent; output does not
    depend on the thread count."""
    kernel = build_kernel(params.d_inf, params.d_sm, tomogram.resolution)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            slices = list(pool.map(lambda s: evaluate_slice(s, params, kernel), tomogram.slices))
    else:
        slices = [evaluate_slice(s, params, kernel) for s in tomogram.slices]
    return Tomogram(slices=slices, d_s=tomogram.d_s, z_min=tomogram.z_min)


def cost_to_gray(cost: np.ndarray, c_barrier: float) -> np.ndarray:
    """Map [0, c_barrier] linearly onto [255, 0] for PGM export."""
    scaled = np.rint(255.0 * (c_barrier - cost.astype(np.float64)) / c_barrier)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def write_pgm(gray: np.ndarray, path):
    rows, cols = gray.shape
    with Path(path).open("wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(gray, dtype=np.uint8).tobytes())
