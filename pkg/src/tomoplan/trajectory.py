"""Minimum-jerk trajectory optimization over a planned path.

The trajectory is a piecewise quintic spline in x, y, z. Free variables are
the intermediate waypoints and (log) piece durations; coefficients come from
the banded spline system that enforces boundary states and continuity through
jerk exactly, with snap continuity closing the system (the first-order
optimality condition of the jerk objective). Travel-cost safety, kinematic
limits, and the ground/ceiling height band enter as cubic hinge penalties
integrated by fixed-order quadrature; their gradients flow through the spline
solve by the adjoint method.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .optim import minimize_lbfgs
from .planner import PathResult
from .tomogram import Layer, Tomogram


SQRT2_ = math.sqrt(2.0)


class TrajectoryError(RuntimeError):
    pass


class DegeneratePathError(TrajectoryError):
    """Zero-length path with boundary states that admit no trajectory."""


class InfeasibleTrajectoryError(TrajectoryError):
    def __init__(self, violations: dict):
        super().__init__(f"penalty violations above tolerance: {violations}")
        self.violations = violations


class InvalidRegionError(ValueError):
    """Bilinear query touching invalid or out-of-range cells."""


@dataclass(frozen=True)
class OptConfig:
    w_z: float = 10.0               # weight of the reference-height tracking term
    w_t: float = 10.0               # weight of total duration
    c_safe: float = 30.0            # interpolated travel cost ceiling
    v_max: float = 1.5
    a_max: float = 2.0
    heading_rate_max: float = 2.0
    d_min: float = 0.50             # height band lower offset over the ground
    d_ref: float = 0.65             # preferred clearance, tracking reference
    c_barrier: float = 50.0
    penalty_cost: float = 20.0
    penalty_kin: float = 1000.0
    penalty_band: float = 200000.0
    samples_per_piece: int = 16
    max_iter: int = 400
    grad_tol: float = 1e-5
    tol_cost: float = 1.0
    tol_kin: float = 0.05
    tol_band: float = 1e-3
    segment_length: float = 1.25    # target piece length for decimation, m
    min_speed_heading: float = 0.05
    z_ref_ceiling_margin: float = 0.03   # keep the tracked height under the ceiling
    ceiling_erosion: float = 0.20        # flat min-filter radius on ceilings, m
    ceiling_skirt_slope: float = 0.30    # descent slope of the bound around overhangs
    band_safety: float = 0.04            # enforce the height band tightened by this
    cost_safety: float = 2.0             # enforce the cost cap tightened by this
    pieces: int | None = None       # override the piece count
    optimize_durations: bool = True

    def __post_init__(self):
        for name in ("w_z", "w_t", "penalty_cost", "penalty_kin", "penalty_band"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("v_max", "a_max", "heading_rate_max", "segment_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.samples_per_piece < 2:
            raise ValueError("samples_per_piece must be at least 2")


# ---------------------------------------------------------------------------
# Quintic basis

_PERM = np.zeros((6, 6))
for _d in range(6):
    for _n in range(_d, 6):
        _PERM[_d, _n] = math.factorial(_n) / math.factorial(_n - _d)


def _basis_vec(t: float, d: int) -> np.ndarray:
    b = np.zeros(6)
    for n in range(d, 6):
        b[n] = _PERM[d, n] * t ** (n - d)
    return b


def _basis_tensor(ts: np.ndarray, d: int) -> np.ndarray:
    """β^(d) stacked for an array of times; shape ts.shape + (6,)."""
    out = np.zeros(ts.shape + (6,))
    for n in range(d, 6):
        out[..., n] = _PERM[d, n] * ts ** (n - d)
    return out


def _jerk_gram(t: float) -> np.ndarray:
    q = np.zeros((6, 6))
    for m in range(3, 6):
        for n in range(3, 6):
            q[m, n] = _PERM[3, m] * _PERM[3, n] * t ** (m + n - 5) / (m + n - 5)
    return q


# ---------------------------------------------------------------------------
# Spline system: 6M coefficients per channel, exact equality constraints

def _spline_matrix(durations: np.ndarray) -> np.ndarray:
    m = len(durations)
    a = np.zeros((6 * m, 6 * m))
    a[0, 0] = 1.0
    a[1, 1] = 1.0
    a[2, 2] = 2.0
    r = 3
    for i in range(m - 1):
        t = durations[i]
        cl = 6 * i
        cr = 6 * (i + 1)
        a[r, cl:cl + 6] = _basis_vec(t, 0)
        r += 1
        a[r, cr] = 1.0
        r += 1
        for d in (1, 2, 3, 4):
            a[r, cl:cl + 6] = _basis_vec(t, d)
            a[r, cr + d] = -_PERM[d, d]
            r += 1
    t = durations[-1]
    cl = 6 * (m - 1)
    a[r, cl:cl + 6] = _basis_vec(t, 0)
    a[r + 1, cl:cl + 6] = _basis_vec(t, 1)
    a[r + 2, cl:cl + 6] = _basis_vec(t, 2)
    return a


def _spline_rhs(m: int, waypoints: np.ndarray, q0: np.ndarray, qf: np.ndarray) -> np.ndarray:
    b = np.zeros((6 * m, 3))
    b[0:3] = q0
    for i in range(m - 1):
        base = 3 + 6 * i
        b[base] = waypoints[i]
        b[base + 1] = waypoints[i]
    b[3 + 6 * (m - 1):] = qf
    return b


def build_spline(waypoints: np.ndarray, durations: np.ndarray,
                 q0: np.ndarray, qf: np.ndarray):
    """Coefficients (M, 6, 3) through the waypoints with C3 continuity."""
    m = len(durations)
    a = _spline_matrix(np.asarray(durations, dtype=np.float64))
    b = _spline_rhs(m, np.asarray(waypoints, dtype=np.float64).reshape(m - 1, 3) if m > 1
                    else np.zeros((0, 3)), q0, qf)
    coeffs = np.linalg.solve(a, b)
    return coeffs.reshape(m, 6, 3), a


# ---------------------------------------------------------------------------
# Trajectory container and sampling

@dataclass
class TrajectoryPiece:
    coeffs: np.ndarray          # (6, 3), channel order x, y, z
    duration: float


@dataclass
class Trajectory:
    pieces: list[TrajectoryPiece]

    @property
    def duration(self) -> float:
        return float(sum(p.duration for p in self.pieces))

    def eval(self, t: float, order: int = 0) -> np.ndarray:
        """Position (order 0) or derivative at global time t."""
        t = float(np.clip(t, 0.0, self.duration))
        for p in self.pieces[:-1]:
            if t <= p.duration:
                return _basis_vec(t, order) @ p.coeffs
            t -= p.duration
        return _basis_vec(t, order) @ self.pieces[-1].coeffs


def sample_trajectory(traj: Trajectory, dt: float):
    """Sample at t = 0, dt, ... plus the exact final time.

    Returns (t, pos, vel, acc) arrays; derivatives are analytic.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    total = traj.duration
    n = int(math.floor(total / dt))
    ts = np.arange(n + 1) * dt
    if total - ts[-1] > 1e-9 * max(1.0, total):
        ts = np.append(ts, total)
    else:
        ts[-1] = total
    pos = np.empty((len(ts), 3))
    vel = np.empty((len(ts), 3))
    acc = np.empty((len(ts), 3))
    for idx, t in enumerate(ts):
        pos[idx] = traj.eval(t, 0)
        vel[idx] = traj.eval(t, 1)
        acc[idx] = traj.eval(t, 2)
    return ts, pos, vel, acc


# ---------------------------------------------------------------------------
# Bilinear layer queries

def _bilinear_batch(values: np.ndarray, valid: np.ndarray, origin, res: float,
                    xs: np.ndarray, ys: np.ndarray):
    rows, cols = values.shape
    u = (xs - origin[0]) / res
    v = (ys - origin[1]) / res
    j0 = np.floor(u).astype(np.int64)
    i0 = np.floor(v).astype(np.int64)
    ok = (i0 >= 0) & (i0 <= rows - 2) & (j0 >= 0) & (j0 <= cols - 2)
    i0c = np.clip(i0, 0, rows - 2)
    j0c = np.clip(j0, 0, cols - 2)
    f00 = values[i0c, j0c].astype(np.float64)
    f01 = values[i0c, j0c + 1].astype(np.float64)
    f10 = values[i0c + 1, j0c].astype(np.float64)
    f11 = values[i0c + 1, j0c + 1].astype(np.float64)
    ok &= (valid[i0c, j0c] & valid[i0c, j0c + 1]
           & valid[i0c + 1, j0c] & valid[i0c + 1, j0c + 1])
    fu = u - j0
    fv = v - i0
    f00 = np.where(ok, f00, 0.0)
    f01 = np.where(ok, f01, 0.0)
    f10 = np.where(ok, f10, 0.0)
    f11 = np.where(ok, f11, 0.0)
    val = (1 - fv) * ((1 - fu) * f00 + fu * f01) + fv * ((1 - fu) * f10 + fu * f11)
    gx = ((1 - fv) * (f01 - f00) + fv * (f11 - f10)) / res
    gy = ((1 - fu) * (f10 - f00) + fu * (f11 - f01)) / res
    return val, gx, gy, ok


def query_elevation_bilinear(layer: Layer, x: float, y: float):
    """Interpolated value and planimetric gradient of the bilinear surface.

    Raises InvalidRegionError when any of the four surrounding cells is
    invalid or out of range; the optimizer treats such samples as barriers.
    """
    val, gx, gy, ok = _bilinear_batch(layer.values, layer.valid, layer.origin,
                                      layer.resolution, np.asarray([x], dtype=np.float64),
                                      np.asarray([y], dtype=np.float64))
    if not ok[0]:
        raise InvalidRegionError(f"query ({x}, {y}) touches invalid or out-of-range cells")
    return float(val[0]), (float(gx[0]), float(gy[0]))


# ---------------------------------------------------------------------------
# Objective

def _hinge_cubed(v: np.ndarray):
    h = np.maximum(v, 0.0)
    return h * h * h, 3.0 * h * h


def _inflate_ceiling(values: np.ndarray, valid: np.ndarray, res: float,
                     erosion: float, skirt_slope: float):
    """Inflated ceiling: flat min-filter over the collision radius, and the
    same with a conical descent skirt added.

    The flat version is the physical bound (overhangs reach outward by the
    robot's radius). The skirted version is what the optimizer enforces: it is
    Lipschitz in the plane so the z channel can always descend in time before
    an overhang; a hard step at the lip would be dynamically infeasible at
    speed. Cells with no ceiling stay +inf.
    """
    flat = np.where(valid, values.astype(np.float64), np.inf)
    if not np.isfinite(flat).any():
        return flat, flat
    radius = int(math.ceil(erosion / res))
    if radius > 0:
        offs = np.arange(-radius, radius + 1)
        footprint = np.hypot(offs[:, None], offs[None, :]) <= radius + 1e-9
        flat = ndimage.minimum_filter(flat, footprint=footprint,
                                      mode="constant", cval=np.inf)
    # chamfer propagation of ceiling + slope * distance, enough iterations to
    # cover drops on the order of the robot's operating heights
    out = flat.copy()
    step = skirt_slope * res
    n_iter = min(60, int(math.ceil(0.8 / max(step, 1e-9))))
    rows, cols = out.shape
    for _ in range(n_iter):
        prev = out
        out = prev.copy()
        for di, dj in ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)):
            w = step * (SQRT2_ if di and dj else 1.0)
            shifted = np.full_like(prev, np.inf)
            src_i = slice(max(0, di), rows + min(0, di))
            dst_i = slice(max(0, -di), rows + min(0, -di))
            src_j = slice(max(0, dj), cols + min(0, dj))
            dst_j = slice(max(0, -dj), cols + min(0, -dj))
            shifted[dst_i, dst_j] = prev[src_i, src_j] + w
            np.minimum(out, shifted, out=out)
        if np.array_equal(out, prev):
            break
    return flat, out


class _Problem:
    """Objective and analytic gradient for one optimization instance."""

    def __init__(self, tomogram: Tomogram, path: PathResult, q0: np.ndarray,
                 qf: np.ndarray, cfg: OptConfig):
        self.cfg = cfg
        self.q0 = q0
        self.qf = qf
        pts = path.xyz
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        arcs = np.concatenate([[0.0], np.cumsum(seg)])
        length = float(arcs[-1])
        m = cfg.pieces if cfg.pieces is not None else max(2, math.ceil(length / cfg.segment_length))
        self.m = int(m)
        s = cfg.samples_per_piece
        self.taus = np.arange(s + 1) / s
        cw = np.ones(s + 1)
        cw[0] = cw[-1] = 0.5
        self.cw = cw / s                           # omega = T_i * cw_s

        # initial waypoints at equal arc fractions, lifted to the reference height
        fracs = np.arange(1, self.m) / self.m
        wp = np.empty((self.m - 1, 3))
        for dim in range(3):
            wp[:, dim] = np.interp(fracs * length, arcs, pts[:, dim])
        wp[:, 2] += cfg.d_ref
        self.w_init = wp

        anchors = np.vstack([q0[0], wp, qf[0]])
        seg_len = np.linalg.norm(np.diff(anchors, axis=0), axis=1)
        self.t_init = np.maximum(0.2, seg_len / (0.5 * cfg.v_max))

        # fixed slice assignment per quadrature sample: the two path vertices
        # bracketing the sample's arc position. Constraints merge both views
        # (floor: lower ground, ceiling: higher bound, cost: cheaper layer),
        # so ascending through a gateway never reads the next surface up as
        # an overhead obstacle.
        sample_fracs = ((np.arange(self.m)[:, None] + self.taus[None, :]) / self.m)
        self.slice_lo, self.slice_hi = self._bracketing_slices(path, arcs, sample_fracs)

        self.res = tomogram.resolution
        self.origin = tomogram.origin
        self.layers = {}
        self.ceiling_bound = {}        # collision-inflated: the contract bound
        self.ceiling_enforced = {}     # plus descent skirt: what penalties use
        for sid in np.unique(np.concatenate([self.slice_lo.ravel(), self.slice_hi.ravel()])):
            sl = tomogram.slices[int(sid)]
            if sl.cost is None:
                raise ValueError("tomogram has no cost layers; evaluate it first")
            self.layers[int(sid)] = sl
            flat, skirted = _inflate_ceiling(sl.ceiling.values, sl.ceiling.valid,
                                             self.res, cfg.ceiling_erosion,
                                             cfg.ceiling_skirt_slope)
            self.ceiling_bound[int(sid)] = (flat, np.isfinite(flat))
            self.ceiling_enforced[int(sid)] = (skirted, np.isfinite(skirted))

    @staticmethod
    def _bracketing_slices(path: PathResult, arcs: np.ndarray, fracs: np.ndarray):
        length = arcs[-1] if arcs[-1] > 0 else 1.0
        a = fracs * length
        pos = np.clip(np.searchsorted(arcs, a), 1, len(arcs) - 1)
        return (path.slice_index[pos - 1].astype(np.int64),
                path.slice_index[pos].astype(np.int64))

    def _query_one_slice(self, xs, ys, sample_slice, ceilings):
        shape = xs.shape
        G = np.zeros(shape)
        Gx = np.zeros(shape)
        Gy = np.zeros(shape)
        g_ok = np.zeros(shape, dtype=bool)
        HC = np.full(shape, np.inf)
        HCx = np.zeros(shape)
        HCy = np.zeros(shape)
        CQ = np.zeros(shape)
        CQx = np.zeros(shape)
        CQy = np.zeros(shape)
        q_ok = np.zeros(shape, dtype=bool)
        for sid, sl in self.layers.items():
            sel = sample_slice == sid
            if not sel.any():
                continue
            x_sel = xs[sel]
            y_sel = ys[sel]
            val, gx, gy, ok = _bilinear_batch(sl.ground.values, sl.ground.valid,
                                              self.origin, self.res, x_sel, y_sel)
            G[sel] = val
            Gx[sel] = gx
            Gy[sel] = gy
            g_ok[sel] = ok
            ceiling_vals, ceiling_ok = ceilings[sid]
            val, gx, gy, ok = _bilinear_batch(ceiling_vals, ceiling_ok,
                                              self.origin, self.res, x_sel, y_sel)
            HC[sel] = np.where(ok, val, np.inf)
            HCx[sel] = np.where(ok, gx, 0.0)
            HCy[sel] = np.where(ok, gy, 0.0)
            cost_valid = np.ones_like(sl.cost.values, dtype=bool)
            val, gx, gy, ok = _bilinear_batch(sl.cost.values, cost_valid,
                                              self.origin, self.res, x_sel, y_sel)
            CQ[sel] = val
            CQx[sel] = gx
            CQy[sel] = gy
            q_ok[sel] = ok
        return G, Gx, Gy, g_ok, HC, HCx, HCy, CQ, CQx, CQy, q_ok

    def _query_surfaces(self, xs, ys, slice_lo, slice_hi, enforced=True):
        """Merged constraint surfaces from the two bracketing slices."""
        ceilings = self.ceiling_enforced if enforced else self.ceiling_bound
        a = self._query_one_slice(xs, ys, slice_lo, ceilings)
        same = slice_lo == slice_hi
        if same.all():
            return a
        b = self._query_one_slice(xs, ys, slice_hi, ceilings)
        Ga, Gax, Gay, aok, HCa, HCax, HCay, CQa, CQax, CQay, qa = a
        Gb, Gbx, Gby, bok, HCb, HCbx, HCby, CQb, CQbx, CQby, qb = b
        both = aok & bok
        take_b_g = both & (Gb < Ga)
        G = np.where(take_b_g, Gb, np.where(aok, Ga, Gb))
        Gx = np.where(take_b_g, Gbx, np.where(aok, Gax, Gbx))
        Gy = np.where(take_b_g, Gby, np.where(aok, Gay, Gby))
        g_ok = aok | bok
        take_b_h = HCb > HCa          # the higher (more permissive) bound wins
        HC = np.where(take_b_h, HCb, HCa)
        HCx = np.where(take_b_h, HCbx, HCax)
        HCy = np.where(take_b_h, HCby, HCay)
        take_b_c = qb & (CQb < CQa)
        CQ = np.where(take_b_c, CQb, np.where(qa, CQa, CQb))
        CQx = np.where(take_b_c, CQbx, np.where(qa, CQax, CQbx))
        CQy = np.where(take_b_c, CQby, np.where(qa, CQay, CQby))
        q_ok = qa | qb
        return G, Gx, Gy, g_ok, HC, HCx, HCy, CQ, CQx, CQy, q_ok

    def objective(self, waypoints: np.ndarray, durations: np.ndarray, need_grad: bool = True):
        cfg = self.cfg
        m = self.m
        coeffs, a_mat = build_spline(waypoints, durations, self.q0, self.qf)

        # jerk effort and its direct T-derivative
        f_total = 0.0
        d_t = np.zeros(m)
        grad_c = np.zeros((m, 6, 3))
        for i in range(m):
            q = _jerk_gram(durations[i])
            f_total += float(np.einsum("nc,nm,mc->", coeffs[i], q, coeffs[i]))
            jerk_end = _basis_vec(durations[i], 3) @ coeffs[i]
            d_t[i] += float(jerk_end @ jerk_end)
            grad_c[i] += 2.0 * (q @ coeffs[i])
        f_total += cfg.w_t * float(np.sum(durations))
        d_t += cfg.w_t

        ts = self.taus[None, :] * durations[:, None]
        b0 = _basis_tensor(ts, 0)
        b1 = _basis_tensor(ts, 1)
        b2 = _basis_tensor(ts, 2)
        b3 = _basis_tensor(ts, 3)
        pos = np.einsum("isn,inc->isc", b0, coeffs)
        vel = np.einsum("isn,inc->isc", b1, coeffs)
        acc = np.einsum("isn,inc->isc", b2, coeffs)
        jerk = np.einsum("isn,inc->isc", b3, coeffs)
        omega = durations[:, None] * self.cw[None, :]

        G, Gx, Gy, g_ok, HC, HCx, HCy, CQ, CQx, CQy, q_ok = self._query_surfaces(
            pos[:, :, 0], pos[:, :, 1], self.slice_lo, self.slice_hi)
        live = g_ok & q_ok

        g_int = np.zeros_like(omega)          # integrand per sample
        d_p = np.zeros_like(pos)
        d_v = np.zeros_like(vel)
        d_a = np.zeros_like(acc)

        # reference-height tracking; the reference is clipped into the height
        # band so it never pulls the trajectory through the ceiling
        if cfg.w_z > 0:
            z_ref = G + cfg.d_ref
            ceil_cap = HC - cfg.z_ref_ceiling_margin
            capped = np.isfinite(HC) & (ceil_cap < z_ref)
            z_ref = np.where(capped, ceil_cap, z_ref)
            low = G + cfg.d_min
            floored = z_ref < low
            z_ref = np.where(floored, low, z_ref)
            ref_gx = np.where(capped & ~floored, HCx, Gx)
            ref_gy = np.where(capped & ~floored, HCy, Gy)
            err = np.where(live, pos[:, :, 2] - z_ref, 0.0)
            g_int += cfg.w_z * err * err
            d_p[:, :, 2] += 2.0 * cfg.w_z * err
            d_p[:, :, 0] -= 2.0 * cfg.w_z * err * ref_gx
            d_p[:, :, 1] -= 2.0 * cfg.w_z * err * ref_gy

        # travel-cost safety, enforced tightened by cost_safety
        pen, dpen = _hinge_cubed(np.where(live, CQ - (cfg.c_safe - cfg.cost_safety), 0.0))
        g_int += cfg.penalty_cost * pen
        d_p[:, :, 0] += cfg.penalty_cost * dpen * CQx
        d_p[:, :, 1] += cfg.penalty_cost * dpen * CQy

        # off-map or invalid-ground samples count as full barriers
        barrier_pen = max(0.0, cfg.c_barrier - cfg.c_safe) ** 3
        g_int += np.where(live, 0.0, cfg.penalty_cost * barrier_pen)

        # height band, enforced tightened by band_safety so that the hinge
        # equilibrium depth stays inside the contract bounds
        bs = cfg.band_safety
        pen, dpen = _hinge_cubed(np.where(live, G + cfg.d_min + bs - pos[:, :, 2], 0.0))
        g_int += cfg.penalty_band * pen
        d_p[:, :, 2] -= cfg.penalty_band * dpen
        d_p[:, :, 0] += cfg.penalty_band * dpen * Gx
        d_p[:, :, 1] += cfg.penalty_band * dpen * Gy
        ceil_live = live & np.isfinite(HC)
        pen, dpen = _hinge_cubed(np.where(ceil_live, pos[:, :, 2] - (HC - bs), 0.0))
        g_int += cfg.penalty_band * pen
        d_p[:, :, 2] += cfg.penalty_band * dpen
        d_p[:, :, 0] -= cfg.penalty_band * dpen * HCx
        d_p[:, :, 1] -= cfg.penalty_band * dpen * HCy

        # kinematic limits
        v2 = np.einsum("isc,isc->is", vel, vel)
        pen, dpen = _hinge_cubed(v2 - cfg.v_max**2)
        g_int += cfg.penalty_kin * pen
        d_v += (2.0 * cfg.penalty_kin * dpen)[:, :, None] * vel
        a2 = np.einsum("isc,isc->is", acc, acc)
        pen, dpen = _hinge_cubed(a2 - cfg.a_max**2)
        g_int += cfg.penalty_kin * pen
        d_a += (2.0 * cfg.penalty_kin * dpen)[:, :, None] * acc

        # planimetric heading rate, gated away from the rest singularity
        vx, vy = vel[:, :, 0], vel[:, :, 1]
        ax, ay = acc[:, :, 0], acc[:, :, 1]
        sp2 = vx * vx + vy * vy
        gate = sp2 > cfg.min_speed_heading**2
        cr = vx * ay - vy * ax
        om2 = cfg.heading_rate_max**2
        viol = np.where(gate, cr * cr - om2 * sp2 * sp2, 0.0)
        pen, dpen = _hinge_cubed(viol)
        g_int += cfg.penalty_kin * pen
        coef = cfg.penalty_kin * dpen
        d_v[:, :, 0] += coef * (2.0 * cr * ay - 4.0 * om2 * sp2 * vx)
        d_v[:, :, 1] += coef * (-2.0 * cr * ax - 4.0 * om2 * sp2 * vy)
        d_a[:, :, 0] += coef * (-2.0 * cr * vy)
        d_a[:, :, 1] += coef * (2.0 * cr * vx)

        f_total += float(np.sum(omega * g_int))

        if not need_grad:
            return f_total, None, None

        # accumulate gradients onto the spline coefficients
        wp_ = omega[:, :, None]
        grad_c += np.einsum("isc,isn->inc", wp_ * d_p, b0)
        grad_c += np.einsum("isc,isn->inc", wp_ * d_v, b1)
        grad_c += np.einsum("isc,isn->inc", wp_ * d_a, b2)

        # direct T-dependence: quadrature weights and sample-time motion
        chain = (np.einsum("isc,isc->is", d_p, vel)
                 + np.einsum("isc,isc->is", d_v, acc)
                 + np.einsum("isc,isc->is", d_a, jerk))
        d_t += np.sum(self.cw[None, :] * g_int, axis=1)
        d_t += np.sum(omega * self.taus[None, :] * chain, axis=1)

        # adjoint through the spline solve
        lam = np.linalg.solve(a_mat.T, grad_c.reshape(6 * m, 3))
        d_w = np.zeros((m - 1, 3))
        for i in range(m - 1):
            base = 3 + 6 * i
            d_w[i] = lam[base] + lam[base + 1]
        for i in range(m):
            if i < m - 1:
                base = 3 + 6 * i
                rows_orders = ((base, 1), (base + 2, 2), (base + 3, 3),
                               (base + 4, 4), (base + 5, 5))
            else:
                base = 3 + 6 * (m - 1)
                rows_orders = ((base, 1), (base + 1, 2), (base + 2, 3))
            for row, order in rows_orders:
                qd = _basis_vec(durations[i], order) @ coeffs[i]
                d_t[i] -= float(lam[row] @ qd)

        return f_total, d_w, d_t

    def violations(self, coeffs: np.ndarray, durations: np.ndarray, oversample: int = 2):
        """Worst-case constraint violations on a denser sampling grid."""
        cfg = self.cfg
        s = cfg.samples_per_piece * oversample
        taus = np.arange(s + 1) / s
        ts = taus[None, :] * durations[:, None]
        b0 = _basis_tensor(ts, 0)
        b1 = _basis_tensor(ts, 1)
        b2 = _basis_tensor(ts, 2)
        pos = np.einsum("isn,inc->isc", b0, coeffs)
        vel = np.einsum("isn,inc->isc", b1, coeffs)
        acc = np.einsum("isn,inc->isc", b2, coeffs)
        # map the denser sample fractions onto the stored per-sample slice ids
        base_idx = np.clip(np.rint(taus * cfg.samples_per_piece).astype(int),
                           0, cfg.samples_per_piece)
        G, _, _, g_ok, HC, _, _, CQ, _, _, q_ok = self._query_surfaces(
            pos[:, :, 0], pos[:, :, 1],
            self.slice_lo[:, base_idx], self.slice_hi[:, base_idx], enforced=False)
        live = g_ok & q_ok
        out = {}
        band_low = np.where(live, G + cfg.d_min - pos[:, :, 2], 0.0)
        band_high = np.where(live & np.isfinite(HC), pos[:, :, 2] - HC, 0.0)
        out["band"] = float(max(band_low.max(initial=0.0), band_high.max(initial=0.0)))
        cost_exc = np.where(live, CQ - cfg.c_safe, cfg.c_barrier - cfg.c_safe)
        out["cost"] = float(cost_exc.max(initial=0.0))
        speed = np.sqrt(np.einsum("isc,isc->is", vel, vel))
        out["vel"] = float(np.maximum(speed - cfg.v_max, 0.0).max(initial=0.0))
        amag = np.sqrt(np.einsum("isc,isc->is", acc, acc))
        out["acc"] = float(np.maximum(amag - cfg.a_max, 0.0).max(initial=0.0))
        vx, vy = vel[:, :, 0], vel[:, :, 1]
        ax, ay = acc[:, :, 0], acc[:, :, 1]
        sp2 = vx * vx + vy * vy
        # the rate of heading change behaves like |a| / speed near rest, so
        # measure the limit only where the robot is meaningfully moving
        gate = sp2 > max(cfg.min_speed_heading * 10.0, 0.25 * cfg.v_max) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            omega = np.where(gate, np.abs(vx * ay - vy * ax) / np.where(gate, sp2, 1.0), 0.0)
        out["heading"] = float(np.maximum(omega - cfg.heading_rate_max, 0.0).max(initial=0.0))
        return out


def default_boundary_state(position, d_ref: float = 0.0) -> np.ndarray:
    """Rest state (zero velocity/acceleration) at a position, lifted by d_ref."""
    q = np.zeros((3, 3))
    q[0] = np.asarray(position, dtype=np.float64)
    q[0, 2] += d_ref
    return q


def optimize_trajectory(tomogram: Tomogram, path: PathResult,
                        q0: np.ndarray | None = None, qf: np.ndarray | None = None,
                        cfg: OptConfig | None = None) -> Trajectory:
    """Smooth the path into an M-piece quintic trajectory.

    Boundary states are (3, 3) arrays of rows (position, velocity,
    acceleration); None means rest at the path endpoint lifted by d_ref.
    Raises InfeasibleTrajectoryError when penalty violations remain above the
    configured tolerances after the iteration budget.
    """
    cfg = cfg or OptConfig()
    if len(path) < 1:
        raise DegeneratePathError("path has no waypoints")
    if q0 is None:
        q0 = default_boundary_state(path.xyz[0], cfg.d_ref)
    if qf is None:
        qf = default_boundary_state(path.xyz[-1], cfg.d_ref)
    q0 = np.asarray(q0, dtype=np.float64).reshape(3, 3)
    qf = np.asarray(qf, dtype=np.float64).reshape(3, 3)

    seg = np.diff(path.xyz, axis=0)
    length = float(np.sum(np.linalg.norm(seg, axis=1))) if len(path) > 1 else 0.0
    if length < 1e-12:
        if np.array_equal(q0, qf) and not q0[1:].any():
            piece = TrajectoryPiece(coeffs=np.vstack([q0[0], np.zeros((5, 3))]), duration=1.0)
            return Trajectory(pieces=[piece])
        raise DegeneratePathError("zero-length path with non-stationary boundary states")

    problem = _Problem(tomogram, path, q0, qf, cfg)
    m = problem.m
    w0 = problem.w_init
    t0 = problem.t_init

    n_w = (m - 1) * 3

    def unpack(x):
        w = x[:n_w].reshape(m - 1, 3)
        if cfg.optimize_durations:
            t = np.exp(np.clip(x[n_w:], math.log(1e-3), math.log(1e4)))
        else:
            t = t0
        return w, t

    def fun(x):
        w, t = unpack(x)
        f, d_w, d_t = problem.objective(w, t)
        g = np.zeros_like(x)
        g[:n_w] = d_w.reshape(-1)
        if cfg.optimize_durations:
            g[n_w:] = d_t * t
        return f, g

    x0 = np.concatenate([w0.reshape(-1), np.log(t0) if cfg.optimize_durations else np.empty(0)])
    if x0.size:
        result = minimize_lbfgs(fun, x0, max_iter=cfg.max_iter, grad_tol=cfg.grad_tol)
        w_best, t_best = unpack(result.x)
    else:
        w_best, t_best = w0, t0

    coeffs, _ = build_spline(w_best, t_best, q0, qf)
    viol = problem.violations(coeffs, t_best)
    bad = {}
    if viol["band"] > cfg.tol_band:
        bad["band"] = viol["band"]
    if viol["cost"] > cfg.tol_cost:
        bad["cost"] = viol["cost"]
    for key in ("vel", "acc", "heading"):
        if viol[key] > cfg.tol_kin:
            bad[key] = viol[key]
    if bad:
        raise InfeasibleTrajectoryError(bad)
    pieces = [TrajectoryPiece(coeffs=coeffs[i].copy(), duration=float(t_best[i]))
              for i in range(m)]
    return Trajectory(pieces=pieces)


# ---------------------------------------------------------------------------
# Export

def save_trajectory_json(traj: Trajectory, out_path):
    doc = {
        "duration": traj.duration,
        "pieces": [
            {"duration": p.duration, "coeffs": p.coeffs.tolist()} for p in traj.pieces
        ],
    }
    with open(out_path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def save_trajectory_csv(traj: Trajectory, out_path, dt: float = 0.05):
    ts, pos, vel, _ = sample_trajectory(traj, dt)
    speed = np.linalg.norm(vel, axis=1)
    with open(out_path, "w") as f:
        f.write("t,x,y,z,vx,vy,vz,speed\n")
        for idx in range(len(ts)):
            f.write(f"{ts[idx]:.6g},{pos[idx, 0]:.9g},{pos[idx, 1]:.9g},{pos[idx, 2]:.9g},"
                    f"{vel[idx, 0]:.9g},{vel[idx, 1]:.9g},{vel[idx, 2]:.9g},{speed[idx]:.9g}\n")
