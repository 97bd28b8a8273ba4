import json

import numpy as np
import pytest

import tomoplan as tp
from tomoplan.planner import PathResult
from tomoplan.tomogram import Layer
from tomoplan.trajectory import (
    DegeneratePathError,
    InfeasibleTrajectoryError,
    InvalidRegionError,
    OptConfig,
    Trajectory,
    TrajectoryPiece,
    _Problem,
    build_spline,
    default_boundary_state,
    optimize_trajectory,
    query_elevation_bilinear,
    sample_trajectory,
    save_trajectory_csv,
    save_trajectory_json,
)

from helpers import evaluated_scene


def _line_path(n=9, length=8.0, z=0.0, k=0):
    xs = np.linspace(1.0, 1.0 + length, n)
    xyz = np.column_stack([xs, np.full(n, 1.5), np.full(n, z)])
    steps = np.full(n, 0.0)
    steps[1:] = np.cumsum(np.full(n - 1, length / (n - 1)))
    return PathResult(xyz=xyz, slice_index=np.full(n, k, dtype=np.int64),
                      cost_so_far=steps, expanded=n)


@pytest.fixture(scope="module")
def flat_tomogram():
    _, _, tom = evaluated_scene("flat_plane", dims=(12, 12), density=300.0, seed=1)
    return tom


# --- bilinear queries ---------------------------------------------------------

def _toy_layer():
    vals = np.arange(16, dtype=np.float32).reshape(4, 4)
    return Layer(vals, 0.5, (0.0, 0.0))


def test_bilinear_at_cell_center():
    layer = _toy_layer()
    val, grad = query_elevation_bilinear(layer, 0.5, 0.5)
    assert val == 5.0
    assert grad == pytest.approx((
        (layer.values[1, 2] - layer.values[1, 1]) / 0.5,
        (layer.values[2, 1] - layer.values[1, 1]) / 0.5,
    ))


def test_bilinear_midpoint_and_gradient():
    vals = np.zeros((2, 2), dtype=np.float32)
    vals[:, 1] = 1.0
    layer = Layer(vals, 0.5, (0.0, 0.0))
    val, grad = query_elevation_bilinear(layer, 0.25, 0.0)
    assert val == pytest.approx(0.5)
    assert grad[0] == pytest.approx(1.0 / 0.5)
    assert grad[1] == pytest.approx(0.0)


def test_bilinear_constant_layer_zero_gradient():
    layer = Layer(np.full((5, 5), 2.5, np.float32), 0.2, (0.0, 0.0))
    for xy in [(0.3, 0.3), (0.51, 0.22), (0.75, 0.6)]:
        val, grad = query_elevation_bilinear(layer, *xy)
        assert val == pytest.approx(2.5)
        assert grad == (0.0, 0.0)


def test_bilinear_invalid_region_signal():
    vals = np.zeros((3, 3), dtype=np.float32)
    vals[1, 1] = np.nan
    layer = Layer(vals, 1.0, (0.0, 0.0))
    with pytest.raises(InvalidRegionError):
        query_elevation_bilinear(layer, 0.5, 0.5)
    with pytest.raises(InvalidRegionError):
        query_elevation_bilinear(layer, 5.0, 0.0)


# --- spline construction --------------------------------------------------------

def test_spline_hits_waypoints_and_boundary():
    rng = np.random.default_rng(0)
    m = 4
    wp = rng.normal(0, 2, (m - 1, 3))
    T = rng.uniform(0.5, 2.0, m)
    q0 = np.array([[0.0, 0.0, 0.5], [0.1, 0.0, 0.0], [0.0, 0.2, 0.0]])
    qf = np.array([[3.0, 1.0, 0.7], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    coeffs, _ = build_spline(wp, T, q0, qf)
    traj = Trajectory([TrajectoryPiece(coeffs[i], T[i]) for i in range(m)])
    assert traj.eval(0.0, 0) == pytest.approx(q0[0], abs=1e-9)
    assert traj.eval(0.0, 1) == pytest.approx(q0[1], abs=1e-9)
    assert traj.eval(0.0, 2) == pytest.approx(q0[2], abs=1e-9)
    assert traj.eval(traj.duration, 0) == pytest.approx(qf[0], abs=1e-8)
    t_acc = 0.0
    for i in range(m - 1):
        t_acc += T[i]
        assert traj.eval(t_acc, 0) == pytest.approx(wp[i], abs=1e-8)


def test_spline_continuity_orders_0_to_3():
    from tomoplan.trajectory import _basis_vec

    rng = np.random.default_rng(7)
    m = 5
    T = rng.uniform(0.4, 2.5, m)
    coeffs, _ = build_spline(rng.normal(0, 3, (m - 1, 3)), T,
                             default_boundary_state([0, 0, 0]),
                             default_boundary_state([5, 5, 1]))
    for i in range(m - 1):
        for order in range(4):
            left = _basis_vec(T[i], order) @ coeffs[i]
            right = _basis_vec(0.0, order) @ coeffs[i + 1]
            assert np.max(np.abs(left - right)) <= 1e-6


def test_single_piece_rest_to_rest_is_closed_form_quintic(flat_tomogram):
    cfg = OptConfig(pieces=1, optimize_durations=False, w_z=0.0)
    path = _line_path(n=2, length=4.0)
    q0 = default_boundary_state(path.xyz[0], cfg.d_ref)
    qf = default_boundary_state(path.xyz[-1], cfg.d_ref)
    traj = optimize_trajectory(flat_tomogram, path, q0, qf, cfg)
    assert len(traj.pieces) == 1
    T = traj.pieces[0].duration
    dx = qf[0] - q0[0]
    expect = np.zeros((6, 3))
    expect[0] = q0[0]
    expect[3] = 10.0 * dx / T**3
    expect[4] = -15.0 * dx / T**4
    expect[5] = 6.0 * dx / T**5
    assert np.max(np.abs(traj.pieces[0].coeffs - expect)) < 1e-8
    # curve check: x(t) = x0 + dx * (10 tau^3 - 15 tau^4 + 6 tau^5)
    for tau in (0.25, 0.5, 0.75):
        t = tau * T
        val = traj.eval(t, 0)
        shape = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
        assert val == pytest.approx(q0[0] + dx * shape, abs=1e-8)


def test_zero_length_stationary_solution(flat_tomogram):
    path = PathResult(xyz=np.array([[2.0, 2.0, 0.0]]), slice_index=np.array([0]),
                      cost_so_far=np.array([0.0]), expanded=1)
    q = default_boundary_state([2.0, 2.0, 0.65])
    traj = optimize_trajectory(flat_tomogram, path, q, q, OptConfig())
    assert len(traj.pieces) == 1
    ts, pos, vel, acc = sample_trajectory(traj, 0.1)
    assert np.all(pos == pos[0])
    assert np.all(vel == 0.0)
    assert np.all(acc == 0.0)


def test_zero_length_conflicting_states_error(flat_tomogram):
    path = PathResult(xyz=np.array([[2.0, 2.0, 0.0]]), slice_index=np.array([0]),
                      cost_so_far=np.array([0.0]), expanded=1)
    q0 = default_boundary_state([2.0, 2.0, 0.65])
    qf = default_boundary_state([3.0, 2.0, 0.65])
    with pytest.raises(DegeneratePathError):
        optimize_trajectory(flat_tomogram, path, q0, qf, OptConfig())


# --- sampling -------------------------------------------------------------------

def test_sample_count_rule():
    piece = TrajectoryPiece(np.zeros((6, 3)), 1.0)
    traj = Trajectory([piece])
    ts, *_ = sample_trajectory(traj, 0.3)          # T/dt = 3.33 -> floor + 2
    assert len(ts) == 5
    assert ts[-1] == pytest.approx(1.0)
    ts, *_ = sample_trajectory(traj, 0.25)         # integral: floor + 1
    assert len(ts) == 5
    assert ts[-1] == pytest.approx(1.0)


def test_sample_constant_trajectory():
    c = np.zeros((6, 3))
    c[0] = [1.0, 2.0, 3.0]
    traj = Trajectory([TrajectoryPiece(c, 2.0)])
    ts, pos, vel, acc = sample_trajectory(traj, 0.5)
    assert np.all(vel == 0.0)
    assert np.all(acc == 0.0)
    assert np.all(pos == [1.0, 2.0, 3.0])


def test_min_jerk_peak_speed():
    # closed-form quintic: peak speed 15 dx / (8 T) at tau = 1/2
    T, dx = 2.0, 3.0
    c = np.zeros((6, 3))
    c[3, 0] = 10 * dx / T**3
    c[4, 0] = -15 * dx / T**4
    c[5, 0] = 6 * dx / T**5
    traj = Trajectory([TrajectoryPiece(c, T)])
    ts, pos, vel, acc = sample_trajectory(traj, T / 1000)
    speeds = np.abs(vel[:, 0])
    assert speeds.max() == pytest.approx(15 * dx / (8 * T), rel=1e-6)
    assert ts[np.argmax(speeds)] == pytest.approx(T / 2, abs=2 * T / 1000)


def test_sample_rejects_bad_dt():
    traj = Trajectory([TrajectoryPiece(np.zeros((6, 3)), 1.0)])
    with pytest.raises(ValueError):
        sample_trajectory(traj, 0.0)


# --- optimization ---------------------------------------------------------------

def test_gradient_matches_finite_differences(flat_tomogram):
    path = tp.plan_path(flat_tomogram, (2, 2, 0), (10, 9, 0))
    cfg = OptConfig()
    q0 = default_boundary_state(path.xyz[0], cfg.d_ref)
    qf = default_boundary_state(path.xyz[-1], cfg.d_ref)
    prob = _Problem(flat_tomogram, path, q0, qf, cfg)
    W, T = prob.w_init.copy(), prob.t_init.copy()
    f0, dW, dT = prob.objective(W, T)
    rng = np.random.default_rng(3)
    h = 1e-6
    worst = 0.0
    for _ in range(8):
        i, c = rng.integers(0, W.shape[0]), rng.integers(0, 3)
        Wp, Wm = W.copy(), W.copy()
        Wp[i, c] += h
        Wm[i, c] -= h
        fd = (prob.objective(Wp, T, need_grad=False)[0]
              - prob.objective(Wm, T, need_grad=False)[0]) / (2 * h)
        worst = max(worst, abs(fd - dW[i, c]) / max(1e-3, abs(fd), abs(dW[i, c])))
    for i in range(len(T)):
        Tp, Tm = T.copy(), T.copy()
        Tp[i] += h
        Tm[i] -= h
        fd = (prob.objective(W, Tp, need_grad=False)[0]
              - prob.objective(W, Tm, need_grad=False)[0]) / (2 * h)
        worst = max(worst, abs(fd - dT[i]) / max(1e-3, abs(fd), abs(dT[i])))
    assert worst <= 1e-4


def test_optimizer_never_worse_than_init(flat_tomogram):
    path = tp.plan_path(flat_tomogram, (2, 2, 0), (9, 10, 0))
    cfg = OptConfig()
    q0 = default_boundary_state(path.xyz[0], cfg.d_ref)
    qf = default_boundary_state(path.xyz[-1], cfg.d_ref)
    prob = _Problem(flat_tomogram, path, q0, qf, cfg)
    f_init, _, _ = prob.objective(prob.w_init, prob.t_init)
    traj = optimize_trajectory(flat_tomogram, path, q0, qf, cfg)
    wp = np.array([traj.eval(sum(p.duration for p in traj.pieces[:i + 1]), 0)
                   for i in range(len(traj.pieces) - 1)])
    T = np.array([p.duration for p in traj.pieces])
    f_final, _, _ = prob.objective(wp, T)
    assert f_final <= f_init + 1e-9


def test_boundary_states_exact(flat_tomogram):
    path = tp.plan_path(flat_tomogram, (2, 3, 0), (10, 4, 0))
    cfg = OptConfig()
    q0 = np.array([[2.0, 3.0, 0.65], [0.2, 0.0, 0.0], [0.0, 0.0, 0.0]])
    qf = np.array([[10.0, 4.0, 0.65], [0.0, -0.1, 0.0], [0.0, 0.0, 0.0]])
    traj = optimize_trajectory(flat_tomogram, path, q0, qf, cfg)
    assert traj.eval(0, 0) == pytest.approx(q0[0], abs=1e-9)
    assert traj.eval(0, 1) == pytest.approx(q0[1], abs=1e-9)
    assert traj.eval(0, 2) == pytest.approx(q0[2], abs=1e-9)
    assert traj.eval(traj.duration, 0) == pytest.approx(qf[0], abs=1e-9)
    assert traj.eval(traj.duration, 1) == pytest.approx(qf[1], abs=1e-9)
    assert traj.eval(traj.duration, 2) == pytest.approx(qf[2], abs=1e-9)


def test_height_band_dip_under_low_ceiling():
    # flat floor with a 0.55 m ceiling strip across the middle of the map
    xs = np.arange(0.025, 10.0, 0.05)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    floor = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    strip = (gx.ravel() >= 4.0) & (gx.ravel() <= 6.0)
    roof = np.column_stack([gx.ravel()[strip], gy.ravel()[strip],
                            np.full(strip.sum(), 0.55)])
    cloud = tp.PointCloud(np.vstack([floor, roof]))
    tom = tp.evaluate_tomogram(tp.build_tomogram(cloud, 0.5, 0.1), tp.TravParams())
    path = tp.plan_path(tom, (1.0, 5.0, 0.0), (9.0, 5.0, 0.0))
    traj = optimize_trajectory(tom, path, cfg=OptConfig())
    ts, pos, _, _ = sample_trajectory(traj, 0.02)
    under = (pos[:, 0] > 4.3) & (pos[:, 0] < 5.7)
    outside = pos[:, 0] < 2.0          # before the anticipatory descent begins
    assert under.any() and outside.any()
    assert np.all(pos[under, 2] <= 0.55 + 1e-3)           # duck under the roof
    assert np.all(pos[under, 2] >= 0.50 - 1e-3)           # stay above the band floor
    assert np.median(pos[outside, 2]) == pytest.approx(0.65, abs=0.02)


def test_infeasible_raises_with_diagnostics(flat_tomogram):
    path = tp.plan_path(flat_tomogram, (2, 2, 0), (10, 10, 0))
    cfg = OptConfig(c_safe=-5.0, max_iter=30)     # nothing can satisfy cost <= -5
    with pytest.raises(InfeasibleTrajectoryError) as err:
        optimize_trajectory(flat_tomogram, path, cfg=cfg)
    assert "cost" in err.value.violations


def test_trajectory_export(tmp_path, flat_tomogram):
    path = tp.plan_path(flat_tomogram, (2, 2, 0), (8, 8, 0))
    traj = optimize_trajectory(flat_tomogram, path, cfg=OptConfig())
    jf = tmp_path / "t.json"
    cf = tmp_path / "t.csv"
    save_trajectory_json(traj, jf)
    save_trajectory_csv(traj, cf, dt=0.1)
    doc = json.loads(jf.read_text())
    assert doc["duration"] == pytest.approx(traj.duration)
    assert len(doc["pieces"]) == len(traj.pieces)
    assert np.asarray(doc["pieces"][0]["coeffs"]).shape == (6, 3)
    lines = cf.read_text().splitlines()
    assert lines[0] == "t,x,y,z,vx,vy,vz,speed"
    assert len(lines) > 10
