"""Point cloud loading and saving (PCD, PLY, plain xyz text).

Only the x/y/z geometry is kept; any other fields in the source files are
skipped. Rows containing NaN or Inf are dropped and counted rather than
treated as fatal, because real LiDAR maps contain invalid returns.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

FORMATS = ("pcd_ascii", "pcd_binary", "ply_ascii", "xyz_text")


class CloudFormatError(ValueError):
    """Unreadable file, malformed header, or zero valid points."""


@dataclass
class PointCloud:
    """Unordered 3D points in meters, stored as an (N, 3) float64 array.

    `dropped` counts non-finite input rows removed at load time.
    Treat instances as immutable once constructed.
    """

    xyz: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        arr = np.asarray(self.xyz, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"expected (N, 3) point array, got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise CloudFormatError("zero valid points")
        if not np.isfinite(arr).all():
            raise ValueError("point cloud contains non-finite coordinates")
        self.xyz = arr

    def __len__(self):
        return self.xyz.shape[0]

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned (min, max) corners over all points."""
        return self.xyz.min(axis=0), self.xyz.max(axis=0)


def _keep_finite(arr: np.ndarray) -> tuple[np.ndarray, int]:
    good = np.isfinite(arr).all(axis=1)
    return arr[good], int(arr.shape[0] - good.sum())


# ---------------------------------------------------------------------------
# xyz text: whitespace separated "x y z" per line, '#' starts a comment

def _load_xyz_text(path: Path) -> PointCloud:
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise CloudFormatError(f"{path}:{lineno}: expected 3 columns, got {len(parts)}")
        try:
            rows.append([float(parts[0]), float(parts[1]), float(parts[2])])
        except ValueError as exc:
            raise CloudFormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise CloudFormatError(f"{path}: zero valid points")
    pts, dropped = _keep_finite(np.asarray(rows, dtype=np.float64))
    if pts.shape[0] == 0:
        raise CloudFormatError(f"{path}: zero valid points")
    return PointCloud(pts, dropped)


def _save_xyz_text(cloud: PointCloud, path: Path):
    with path.open("w") as f:
        f.write("# x y z\n")
        for x, y, z in cloud.xyz:
            f.write(f"{x:.17g} {y:.17g} {z:.17g}\n")


# ---------------------------------------------------------------------------
# PCD (ASCII and binary little-endian float32, fields x y z required)

def _parse_pcd_header(fh) -> dict:
    header = {}
    while True:
        raw = fh.readline()
        if not raw:
            raise CloudFormatError("PCD header ended before DATA line")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith("#"):
            continue
        key, *rest = line.split()
        header[key.upper()] = rest
        if key.upper() == "DATA":
            return header


def _pcd_layout(header: dict):
    try:
        fields = [f.lower() for f in header["FIELDS"]]
        sizes = [int(s) for s in header["SIZE"]]
        types = [t.upper() for t in header["TYPE"]]
        counts = [int(c) for c in header.get("COUNT", ["1"] * len(fields))]
        n_points = int(header["POINTS"][0])
        data = header["DATA"][0].lower()
    except (KeyError, IndexError, ValueError) as exc:
        raise CloudFormatError(f"malformed PCD header: {exc}") from exc
    for axis in ("x", "y", "z"):
        if axis not in fields:
            raise CloudFormatError(f"PCD file missing field '{axis}'")
    return fields, sizes, types, counts, n_points, data


def _load_pcd(path: Path, binary: bool) -> PointCloud:
    with path.open("rb") as fh:
        header = _parse_pcd_header(fh)
        fields, sizes, types, counts, n_points, data = _pcd_layout(header)
        if data != ("binary" if binary else "ascii"):
            raise CloudFormatError(f"{path}: header DATA is '{data}', expected "
                                   f"{'binary' if binary else 'ascii'}")
        if binary:
            np_types = {"F": "f", "I": "i", "U": "u"}
            dt = []
            for name, size, typ, count in zip(fields, sizes, types, counts):
                if typ not in np_types:
                    raise CloudFormatError(f"unsupported PCD TYPE '{typ}'")
                base = f"<{np_types[typ]}{size}"
                dt.append((name, base, (count,)) if count > 1 else (name, base))
            dtype = np.dtype(dt)
            for axis in ("x", "y", "z"):
                if dtype[axis] != np.dtype("<f4"):
                    raise CloudFormatError("binary PCD x/y/z must be little-endian float32")
            buf = fh.read(dtype.itemsize * n_points)
            if len(buf) < dtype.itemsize * n_points:
                raise CloudFormatError(f"{path}: truncated binary payload")
            rec = np.frombuffer(buf, dtype=dtype, count=n_points)
            pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
        else:
            idx = [fields.index(a) for a in ("x", "y", "z")]
            # column offsets account for multi-count fields before each axis
            col_of = []
            offsets = np.cumsum([0] + counts[:-1])
            for a in idx:
                col_of.append(int(offsets[a]))
            rows = []
            for lineno in range(n_points):
                raw = fh.readline()
                if not raw:
                    raise CloudFormatError(f"{path}: expected {n_points} points, file ended at {lineno}")
                parts = raw.split()
                try:
                    rows.append([float(parts[c]) for c in col_of])
                except (IndexError, ValueError) as exc:
                    raise CloudFormatError(f"{path}: bad ascii row {lineno}: {exc}") from exc
            pts = np.asarray(rows, dtype=np.float64)
    pts, dropped = _keep_finite(pts)
    if pts.shape[0] == 0:
        raise CloudFormatError(f"{path}: zero valid points")
    return PointCloud(pts, dropped)


def _save_pcd(cloud: PointCloud, path: Path, binary: bool):
    n = len(cloud)
    size = 4 if binary else 8
    header = (
        "# .PCD v0.7 - Point Cloud Data file format\n"
        "VERSION 0.7\n"
        "FIELDS x y z\n"
        f"SIZE {size} {size} {size}\n"
        "TYPE F F F\n"
        "COUNT 1 1 1\n"
        f"WIDTH {n}\n"
        "HEIGHT 1\n"
        "VIEWPOINT 0 0 0 1 0 0 0\n"
        f"POINTS {n}\n"
        f"DATA {'binary' if binary else 'ascii'}\n"
    )
    with path.open("wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(cloud.xyz, dtype="<f4").tobytes())
        else:
            for x, y, z in cloud.xyz:
                f.write(f"{x:.17g} {y:.17g} {z:.17g}\n".encode("ascii"))


# ---------------------------------------------------------------------------
# PLY (ASCII only)

def _load_ply_ascii(path: Path) -> PointCloud:
    with path.open("rb") as fh:
        if fh.readline().strip() != b"ply":
            raise CloudFormatError(f"{path}: not a PLY file")
        n_vertex = None
        props = []
        in_vertex = False
        while True:
            raw = fh.readline()
            if not raw:
                raise CloudFormatError(f"{path}: PLY header ended before end_header")
            line = raw.decode("ascii", errors="replace").strip()
            if line == "end_header":
                break
            parts = line.split()
            if not parts or parts[0] == "comment":
                continue
            if parts[0] == "format":
                if parts[1] != "ascii":
                    raise CloudFormatError(f"{path}: only ascii PLY is supported")
            elif parts[0] == "element":
                in_vertex = parts[1] == "vertex"
                if in_vertex:
                    n_vertex = int(parts[2])
            elif parts[0] == "property" and in_vertex:
                props.append(parts[-1])
        if n_vertex is None:
            raise CloudFormatError(f"{path}: PLY file has no vertex element")
        try:
            cols = [props.index(a) for a in ("x", "y", "z")]
        except ValueError:
            raise CloudFormatError(f"{path}: vertex element missing x/y/z properties")
        rows = []
        for lineno in range(n_vertex):
            raw = fh.readline()
            if not raw:
                raise CloudFormatError(f"{path}: expected {n_vertex} vertices, got {lineno}")
            parts = raw.split()
            try:
                rows.append([float(parts[c]) for c in cols])
            except (IndexError, ValueError) as exc:
                raise CloudFormatError(f"{path}: bad vertex row {lineno}: {exc}") from exc
    if not rows:
        raise CloudFormatError(f"{path}: zero valid points")
    pts, dropped = _keep_finite(np.asarray(rows, dtype=np.float64))
    if pts.shape[0] == 0:
        raise CloudFormatError(f"{path}: zero valid points")
    return PointCloud(pts, dropped)


def _save_ply_ascii(cloud: PointCloud, path: Path):
    with path.open("wb") as f:
        f.write(
            (
                "ply\n"
                "format ascii 1.0\n"
                f"element vertex {len(cloud)}\n"
                "property double x\n"
                "property double y\n"
                "property double z\n"
                "end_header\n"
            ).encode("ascii")
        )
        for x, y, z in cloud.xyz:
            f.write(f"{x:.17g} {y:.17g} {z:.17g}\n".encode("ascii"))


_LOADERS = {
    "pcd_ascii": lambda p: _load_pcd(p, binary=False),
    "pcd_binary": lambda p: _load_pcd(p, binary=True),
    "ply_ascii": _load_ply_ascii,
    "xyz_text": _load_xyz_text,
}

_SAVERS = {
    "pcd_ascii": lambda c, p: _save_pcd(c, p, binary=False),
    "pcd_binary": lambda c, p: _save_pcd(c, p, binary=True),
    "ply_ascii": _save_ply_ascii,
    "xyz_text": _save_xyz_text,
}


def load_cloud(path, fmt: str) -> PointCloud:
    """Read a point cloud; non-finite rows are dropped into `cloud.dropped`."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format '{fmt}', expected one of {FORMATS}")
    path = Path(path)
    if not path.is_file():
        raise CloudFormatError(f"{path}: no such file")
    return _LOADERS[fmt](path)


def save_cloud(cloud: PointCloud, path, fmt: str):
    """Write a point cloud. pcd_binary stores float32; text formats keep full precision."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format '{fmt}', expected one of {FORMATS}")
    _SAVERS[fmt](cloud, Path(path))


def sniff_format(path) -> str:
    """Guess the file format from the extension (and PCD DATA header)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pcd":
        if path.is_file():
            with path.open("rb") as fh:
                header = _parse_pcd_header(fh)
            return "pcd_binary" if header["DATA"][0].lower() == "binary" else "pcd_ascii"
        return "pcd_binary"
    if ext == ".ply":
        return "ply_ascii"
    return "xyz_text"
