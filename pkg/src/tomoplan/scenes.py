"""Procedural point cloud scenes with known geometry for tests and benchmarks.

Surfaces are sampled on regular grids with spacing 1/sqrt(density) so that
every raster cell at resolution >= spacing is guaranteed to contain points,
plus bounded uniform z-noise. Generation is a pure function of the spec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud_io import PointCloud

SCENE_KINDS = (
    "flat_plane",
    "spiral_stair",
    "two_floor_building",
    "ramp_over_tunnel",
    "random_multilayer",
)

_DEFAULT_DIMS = {
    "flat_plane": (10.0, 10.0),            # length, width
    "spiral_stair": (3.05, 1.05),          # outer / inner half-width of the winding
    "two_floor_building": (16.0, 10.0, 3.0),  # length, width, floor height
    "ramp_over_tunnel": (24.0, 12.0, 2.0),    # length, width, deck height
    "random_multilayer": (10.0, 10.0, 3.5),   # length, width, max platform height
}

SPIRAL_FLOOR_MARGIN = 1.45   # floor apron beyond the outer half-width


@dataclass(frozen=True)
class SceneSpec:
    """Parameters for one synthetic scene.

    `dimensions` is interpreted per kind (see _DEFAULT_DIMS); an empty tuple
    selects the default. `turns` and `rise_per_turn` apply to spiral_stair.
    """

    kind: str
    dimensions: tuple[float, ...] = ()
    density: float = 400.0          # points per square meter of surface
    noise_sigma: float = 0.0        # bounded uniform z-noise, meters
    seed: int = 0
    turns: float = 2.0              # spiral loops (rounded to whole loops)
    rise_per_turn: float = 3.0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind '{self.kind}', expected one of {SCENE_KINDS}")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        dims = tuple(float(d) for d in self.dimensions) or _DEFAULT_DIMS[self.kind]
        if any(d <= 0 for d in dims):
            raise ValueError("scene dimensions must be positive")
        if self.kind == "spiral_stair":
            if len(dims) != 2 or dims[1] >= dims[0]:
                raise ValueError("spiral_stair dimensions are (outer_half_width, inner_half_width), inner < outer")
            if self.turns < 1 or self.rise_per_turn <= 0:
                raise ValueError("spiral_stair needs turns >= 1 and positive rise_per_turn")
        object.__setattr__(self, "dimensions", dims)

    @property
    def spacing(self) -> float:
        return 1.0 / math.sqrt(self.density)

    # square-spiral helpers; tread depth targets 0.3 m so riser lines stay on
    # 0.1 m raster boundaries with the default dimensions
    @property
    def spiral_run_steps(self) -> int:
        return max(1, round(2.0 * self.dimensions[1] / 0.3))

    @property
    def spiral_loops(self) -> int:
        return max(1, round(self.turns))

    @property
    def spiral_step_rise(self) -> float:
        return self.rise_per_turn / (4 * self.spiral_run_steps)

    @property
    def spiral_height(self) -> float:
        return self.spiral_loops * self.rise_per_turn


def _grid_1d(length: float, spacing: float) -> np.ndarray:
    n = max(1, int(round(length / spacing)))
    return (np.arange(n) + 0.5) * (length / n)


def _rect(x0, y0, lx, ly, z, spacing):
    """Horizontal rectangle surface. z may be a scalar or f(x, y) -> z."""
    xs = _grid_1d(lx, spacing) + x0
    ys = _grid_1d(ly, spacing) + y0
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    gx = gx.ravel()
    gy = gy.ravel()
    gz = np.full_like(gx, z) if np.isscalar(z) else z(gx, gy)
    return np.stack([gx, gy, gz], axis=1)


def _wall(x0, y0, x1, y1, z0, z1, spacing):
    """Vertical curtain of points between two ground positions."""
    length = math.hypot(x1 - x0, y1 - y0)
    ss = _grid_1d(length, spacing) / length
    zs = _grid_1d(z1 - z0, spacing) + z0
    gs, gz = np.meshgrid(ss, zs, indexing="ij")
    gx = x0 + gs.ravel() * (x1 - x0)
    gy = y0 + gs.ravel() * (y1 - y0)
    return np.stack([gx, gy, gz.ravel()], axis=1)


def _flat_plane(spec: SceneSpec):
    lx, ly = spec.dimensions
    return [_rect(0.0, 0.0, lx, ly, 0.0, spec.spacing)]


def _spiral_segments(spec: SceneSpec):
    """Footprints and heights of the square spiral staircase segments.

    Yields (x0, x1, y0, y1, z) rectangles: treads along the four sides of the
    square winding plus flat corner landings, climbing counterclockwise. The
    center column footprint is left empty (unknown space reads as a barrier).
    """
    b, a = spec.dimensions
    n = spec.spiral_run_steps
    td = 2.0 * a / n
    s = spec.spiral_step_rise
    for loop in range(spec.spiral_loops):
        base = loop * spec.rise_per_turn
        for m in range(1, n + 1):   # south run, heading east
            yield (-a + (m - 1) * td, -a + m * td, -b, -a, base + m * s)
        yield (a, b, -b, -a, base + n * s)                       # SE landing
        for m in range(1, n + 1):   # east run, heading north
            yield (a, b, -a + (m - 1) * td, -a + m * td, base + (n + m) * s)
        yield (a, b, a, b, base + 2 * n * s)                     # NE landing
        for m in range(1, n + 1):   # north run, heading west
            yield (a - m * td, a - (m - 1) * td, a, b, base + (2 * n + m) * s)
        yield (-b, -a, a, b, base + 3 * n * s)                   # NW landing
        for m in range(1, n + 1):   # west run, heading south
            yield (-b, -a, a - m * td, a - (m - 1) * td, base + (3 * n + m) * s)
        yield (-b, -a, -b, -a, base + 4 * n * s)                 # SW landing


def _spiral_stair(spec: SceneSpec):
    """Square spiral staircase winding around an empty center column.

    Treads sit at exact multiples of the step rise and every riser or edge
    line is axis-aligned, so all elevation boundaries fall on 0.1 m raster
    cell boundaries when built at that resolution with the default
    dimensions. Co-located cells across slices then share bitwise-equal
    elevations, which is what lets redundant slices collapse cleanly.
    """
    b, a = spec.dimensions
    s = spec.spacing
    ext = b + SPIRAL_FLOOR_MARGIN
    parts = []
    floor = _rect(-ext, -ext, 2 * ext, 2 * ext, 0.0, s)
    hole = (np.abs(floor[:, 0]) < a) & (np.abs(floor[:, 1]) < a)
    parts.append(floor[~hole])
    # pin the exact planimetric bounds so raster alignment is reproducible
    corners = np.array([[-ext, -ext, 0.0], [ext, -ext, 0.0],
                        [-ext, ext, 0.0], [ext, ext, 0.0]])
    parts.append(corners)
    for x0, x1, y0, y1, z in _spiral_segments(spec):
        parts.append(_rect(x0, y0, x1 - x0, y1 - y0, z, s))
    return parts


def spiral_ground_levels(spec: SceneSpec, x: float, y: float) -> np.ndarray:
    """Analytic ground heights of the square spiral at (x, y), ascending.

    The floor level 0.0 is present everywhere outside the center column and
    within the apron; stair segments contribute their tread or landing
    levels. Test oracle for the generator.
    """
    if spec.kind != "spiral_stair":
        raise ValueError("spiral_ground_levels applies to spiral_stair specs")
    b, a = spec.dimensions
    ext = b + SPIRAL_FLOOR_MARGIN
    levels = []
    if max(abs(x), abs(y)) <= ext and not (abs(x) < a and abs(y) < a):
        levels.append(0.0)
    for x0, x1, y0, y1, z in _spiral_segments(spec):
        if x0 <= x <= x1 and y0 <= y <= y1:
            levels.append(z)
    return np.asarray(sorted(set(levels)))


def _two_floor_building(spec: SceneSpec):
    lx, ly, fh = spec.dimensions
    s = spec.spacing
    parts = [_rect(0.0, 0.0, lx, ly, 0.0, s)]
    # stairwell opening with a straight ramp, slope kept under 0.36
    ramp_len = max(fh / 0.30, 4.0)
    x_a, x_b = 1.5, 1.5 + ramp_len
    y_a, y_b = ly / 2 - 1.5, ly / 2 + 1.5
    slope = fh / (x_b - x_a)
    parts.append(_rect(x_a, y_a, x_b - x_a, y_b - y_a,
                       lambda gx, gy: (gx - x_a) * slope, s))
    # upper slab everywhere except the opening
    op_x0, op_x1 = x_a - 0.5, x_b + 0.5
    slab = _rect(0.0, 0.0, lx, ly, fh, s)
    in_opening = ((slab[:, 0] >= op_x0) & (slab[:, 0] <= op_x1)
                  & (slab[:, 1] >= y_a) & (slab[:, 1] <= y_b))
    parts.append(slab[~in_opening])
    # perimeter walls up to one meter over the top floor
    top = fh + 1.0
    parts.append(_wall(0, 0, lx, 0, 0, top, s))
    parts.append(_wall(lx, 0, lx, ly, 0, top, s))
    parts.append(_wall(lx, ly, 0, ly, 0, top, s))
    parts.append(_wall(0, ly, 0, 0, 0, top, s))
    return parts


def _ramp_over_tunnel(spec: SceneSpec):
    lx, ly, hb = spec.dimensions
    s = spec.spacing
    parts = [_rect(0.0, 0.0, lx, ly, 0.0, s)]
    ramp_len = max(hb / 0.30, 3.0)
    xc = lx / 2
    x1, x2 = xc - 2.0, xc + 2.0
    yc0, yc1 = ly / 2 - 2.0, ly / 2 + 2.0
    # deck over the tunnel plus the two approach ramps along x
    parts.append(_rect(x1, yc0, x2 - x1, yc1 - yc0, hb, s))
    parts.append(_rect(x1 - ramp_len, yc0, ramp_len, yc1 - yc0,
                       lambda gx, gy: (gx - (x1 - ramp_len)) / ramp_len * hb, s))
    parts.append(_rect(x2, yc0, ramp_len, yc1 - yc0,
                       lambda gx, gy: (x2 + ramp_len - gx) / ramp_len * hb, s))
    return parts


def _random_multilayer(spec: SceneSpec, rng: np.random.Generator):
    lx, ly, hmax = spec.dimensions
    s = spec.spacing
    parts = [_rect(0.0, 0.0, lx, ly, 0.0, s)]
    n_plat = int(rng.integers(3, 8))
    for _ in range(n_plat):
        w = float(rng.uniform(1.8, min(4.5, lx / 2)))
        d = float(rng.uniform(1.8, min(4.5, ly / 2)))
        px = float(rng.uniform(0.0, lx - w))
        py = float(rng.uniform(0.0, ly - d))
        h = float(rng.uniform(1.2, hmax))
        parts.append(_rect(px, py, w, d, h, s))
        # ramp from the ground up to one platform edge
        ramp_len = h / 0.30
        side = int(rng.integers(0, 2))
        if side == 0 and px - ramp_len > 0:
            parts.append(_rect(px - ramp_len, py, ramp_len, min(d, 2.0),
                               lambda gx, gy, _x=px, _L=ramp_len, _h=h: (gx - (_x - _L)) / _L * _h, s))
        elif px + w + ramp_len < lx:
            parts.append(_rect(px + w, py, ramp_len, min(d, 2.0),
                               lambda gx, gy, _x=px + w, _L=ramp_len, _h=h: (_x + _L - gx) / _L * _h, s))
    n_wall = int(rng.integers(2, 6))
    for _ in range(n_wall):
        wx = float(rng.uniform(0.5, lx - 0.5))
        wy = float(rng.uniform(0.5, ly - 0.5))
        ang = float(rng.uniform(0.0, math.pi))
        half = float(rng.uniform(1.0, 3.0))
        hx, hy = half * math.cos(ang), half * math.sin(ang)
        x0, y0 = np.clip(wx - hx, 0, lx), np.clip(wy - hy, 0, ly)
        x1, y1 = np.clip(wx + hx, 0, lx), np.clip(wy + hy, 0, ly)
        if math.hypot(x1 - x0, y1 - y0) > 0.5:
            parts.append(_wall(float(x0), float(y0), float(x1), float(y1),
                               0.0, float(rng.uniform(0.8, 2.2)), s))
    return parts


def generate_scene(spec: SceneSpec) -> PointCloud:
    """Build the scene's point cloud; deterministic for a given spec."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "flat_plane":
        parts = _flat_plane(spec)
    elif spec.kind == "spiral_stair":
        parts = _spiral_stair(spec)
    elif spec.kind == "two_floor_building":
        parts = _two_floor_building(spec)
    elif spec.kind == "ramp_over_tunnel":
        parts = _ramp_over_tunnel(spec)
    else:
        parts = _random_multilayer(spec, rng)
    pts = np.concatenate(parts, axis=0)
    if spec.noise_sigma > 0:
        pts[:, 2] += rng.uniform(-spec.noise_sigma, spec.noise_sigma, pts.shape[0])
    return PointCloud(pts)
