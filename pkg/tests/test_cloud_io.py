import numpy as np
import pytest

import tomoplan as tp
from tomoplan.cloud_io import CloudFormatError, sniff_format
from tomoplan.scenes import spiral_ground_levels


def test_xyz_text_three_lines(tmp_path):
    f = tmp_path / "tiny.xyz"
    f.write_text("0 0 0\n1 0 0\n0 1 2\n")
    cloud = tp.load_cloud(f, "xyz_text")
    assert len(cloud) == 3
    lo, hi = cloud.bounds
    assert np.array_equal(lo, [0, 0, 0])
    assert np.array_equal(hi, [1, 1, 2])


def test_xyz_text_comments_and_nan(tmp_path):
    lines = ["# header comment"]
    for k in range(10):
        lines.append(f"{k} {k} 0.5  # trailing note")
    lines[4] = "3 nan 0.5"
    f = tmp_path / "c.xyz"
    f.write_text("\n".join(lines) + "\n")
    cloud = tp.load_cloud(f, "xyz_text")
    assert len(cloud) == 9
    assert cloud.dropped == 1


def test_empty_file_errors(tmp_path):
    f = tmp_path / "empty.xyz"
    f.write_text("")
    with pytest.raises(CloudFormatError, match="zero valid points"):
        tp.load_cloud(f, "xyz_text")


def test_all_nan_errors(tmp_path):
    f = tmp_path / "allnan.xyz"
    f.write_text("nan nan nan\ninf 0 0\n")
    with pytest.raises(CloudFormatError, match="zero valid points"):
        tp.load_cloud(f, "xyz_text")


def test_missing_file_errors(tmp_path):
    with pytest.raises(CloudFormatError, match="no such file"):
        tp.load_cloud(tmp_path / "nope.pcd", "pcd_binary")


def test_malformed_row_errors(tmp_path):
    f = tmp_path / "bad.xyz"
    f.write_text("1 2\n")
    with pytest.raises(CloudFormatError, match="expected 3 columns"):
        tp.load_cloud(f, "xyz_text")


@pytest.mark.parametrize("fmt", tp.FORMATS)
def test_round_trip_exact(tmp_path, fmt):
    rng = np.random.default_rng(42)
    pts = rng.uniform(-50, 50, (257, 3))
    if fmt == "pcd_binary":
        pts = pts.astype(np.float32).astype(np.float64)   # format precision
    cloud = tp.PointCloud(pts)
    f = tmp_path / f"c_{fmt}.dat"
    tp.save_cloud(cloud, f, fmt)
    back = tp.load_cloud(f, fmt)
    assert np.array_equal(back.xyz, cloud.xyz)


def test_pcd_binary_round_trip_bit_exact_bytes(tmp_path):
    rng = np.random.default_rng(3)
    cloud = tp.PointCloud(rng.normal(0, 10, (500, 3)))
    a = tmp_path / "a.pcd"
    b = tmp_path / "b.pcd"
    tp.save_cloud(cloud, a, "pcd_binary")
    tp.save_cloud(tp.load_cloud(a, "pcd_binary"), b, "pcd_binary")
    assert a.read_bytes() == b.read_bytes()


def test_pcd_extra_fields_ignored(tmp_path):
    f = tmp_path / "rgb.pcd"
    header = ("VERSION 0.7\nFIELDS x y z intensity\nSIZE 8 8 8 8\nTYPE F F F F\n"
              "COUNT 1 1 1 1\nWIDTH 2\nHEIGHT 1\nPOINTS 2\nDATA ascii\n")
    f.write_text(header + "1 2 3 99\n4 5 6 12\n")
    cloud = tp.load_cloud(f, "pcd_ascii")
    assert np.array_equal(cloud.xyz, [[1, 2, 3], [4, 5, 6]])


def test_pcd_malformed_header(tmp_path):
    f = tmp_path / "broken.pcd"
    f.write_text("VERSION 0.7\nFIELDS x y\nSIZE 4 4\nTYPE F F\nCOUNT 1 1\n"
                 "WIDTH 1\nHEIGHT 1\nPOINTS 1\nDATA ascii\n1 2\n")
    with pytest.raises(CloudFormatError, match="missing field"):
        tp.load_cloud(f, "pcd_ascii")


def test_sniff_format(tmp_path):
    cloud = tp.PointCloud(np.ones((4, 3)))
    f = tmp_path / "x.pcd"
    tp.save_cloud(cloud, f, "pcd_ascii")
    assert sniff_format(f) == "pcd_ascii"
    tp.save_cloud(cloud, f, "pcd_binary")
    assert sniff_format(f) == "pcd_binary"
    assert sniff_format(tmp_path / "y.ply") == "ply_ascii"
    assert sniff_format(tmp_path / "y.xyz") == "xyz_text"


# --- scene generation -------------------------------------------------------

def test_flat_plane_counts_and_noise_band():
    spec = tp.SceneSpec(kind="flat_plane", dimensions=(10, 10), density=100.0,
                        noise_sigma=0.02, seed=7)
    cloud = tp.generate_scene(spec)
    assert len(cloud) == 10_000
    assert np.all(np.abs(cloud.xyz[:, 2]) <= 0.02 + 1e-12)


def test_generate_scene_deterministic():
    spec = tp.SceneSpec(kind="random_multilayer", density=150.0, noise_sigma=0.01, seed=11)
    a = tp.generate_scene(spec)
    b = tp.generate_scene(spec)
    assert np.array_equal(a.xyz, b.xyz)


def test_spiral_height_span():
    spec = tp.SceneSpec(kind="spiral_stair", seed=1, turns=2.0, rise_per_turn=3.0)
    cloud = tp.generate_scene(spec)
    span = cloud.xyz[:, 2].max() - cloud.xyz[:, 2].min()
    assert span >= 6.0


def test_spiral_analytic_levels_match_cloud():
    spec = tp.SceneSpec(kind="spiral_stair", seed=1, turns=2.0, rise_per_turn=3.0,
                        density=400.0)
    cloud = tp.generate_scene(spec)
    rng = np.random.default_rng(0)
    pts = cloud.xyz[rng.choice(len(cloud), 300, replace=False)]
    for x, y, z in pts:
        levels = spiral_ground_levels(spec, x, y)
        assert levels.size > 0
        # every sampled point sits on one of the analytic surface levels
        assert np.min(np.abs(levels - z)) < 1e-9


def test_invalid_specs_rejected():
    with pytest.raises(ValueError, match="unknown scene kind"):
        tp.SceneSpec(kind="volcano")
    with pytest.raises(ValueError, match="density"):
        tp.SceneSpec(kind="flat_plane", density=0.0)
    with pytest.raises(ValueError, match="positive"):
        tp.SceneSpec(kind="flat_plane", dimensions=(0.0, 5.0))
