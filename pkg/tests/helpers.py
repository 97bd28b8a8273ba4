"""Shared construction helpers for the test suite."""

import numpy as np

from tomoplan.tomogram import Layer, Tomogram, TomogramSlice


def make_tomogram(grounds, ceilings=None, costs=None, res=0.1, origin=(0.0, 0.0),
                  d_s=0.5, z_min=0.0, heights=None):
    """Build a tomogram directly from per-slice 2D arrays (NaN = invalid)."""
    grounds = [np.asarray(g, dtype=np.float32) for g in grounds]
    n = len(grounds)
    if ceilings is None:
        ceilings = [np.full_like(grounds[k], np.nan) for k in range(n)]
    if heights is None:
        heights = [z_min + d_s * (k + 1) for k in range(n)]
    slices = []
    for k in range(n):
        cost = None
        if costs is not None:
            cost = Layer(np.asarray(costs[k], dtype=np.float32), res, origin)
        slices.append(
            TomogramSlice(
                ground=Layer(grounds[k], res, origin),
                ceiling=Layer(np.asarray(ceilings[k], dtype=np.float32), res, origin),
                plane_height=float(heights[k]),
                index=k,
                cost=cost,
            )
        )
    return Tomogram(slices=slices, d_s=d_s, z_min=z_min)


def evaluated_scene(kind, dims=None, density=300.0, seed=0, noise=0.0,
                    d_s=0.5, r_g=0.1, threads=1, **spec_kw):
    """Generate a scene, build, and evaluate it with Table-default parameters."""
    import tomoplan as tp

    spec = tp.SceneSpec(kind=kind, dimensions=tuple(dims) if dims else (),
                        density=density, seed=seed, noise_sigma=noise, **spec_kw)
    cloud = tp.generate_scene(spec)
    tom = tp.build_tomogram(cloud, d_s, r_g, threads=threads)
    return spec, cloud, tp.evaluate_tomogram(tom, tp.TravParams(), threads=threads)


def traversable_cells(tomogram, c_barrier=50.0):
    """(k, i, j, x, y, z) tuples for every traversable member cell."""
    out = []
    ox, oy = tomogram.origin
    res = tomogram.resolution
    for sl in tomogram.slices:
        ok = sl.ground.valid & (sl.cost.values < c_barrier)
        ii, jj = np.nonzero(ok)
        for i, j in zip(ii.tolist(), jj.tolist()):
            out.append((sl.index, i, j, ox + j * res, oy + i * res,
                        float(sl.ground.values[i, j])))
    return out
