"""Slice simplification: drop slices whose traversable cells are covered by neighbors.

A traversable cell is unique when neither the slice below nor the slice above
already represents the same 3D position at no worse cost. Slices with no
unique cells are removed in a forward sweep, re-checking against the current
survivors, until a full pass removes nothing.
"""

from __future__ import annotations

import numpy as np

from .tomogram import Tomogram, TomogramSlice

DEFAULT_EPS_E = 1e-6


def _side_condition(sl: TomogramSlice, nb: TomogramSlice | None, eps_e: float,
                    lower: bool) -> np.ndarray:
    """True where the neighbor slice does not cover this slice's cell."""
    if nb is None:
        return np.ones(sl.ground.shape, dtype=bool)
    nv = nb.ground.valid
    e = np.where(sl.ground.valid, sl.ground.values, 0.0).astype(np.float64)
    e_nb = np.where(nv, nb.ground.values, 0.0).astype(np.float64)
    elev_new = (e - e_nb > eps_e) if lower else (e_nb - e > eps_e)
    cheaper = sl.cost.values < nb.cost.values
    return np.where(nv, elev_new | cheaper, True)


def _unique_mask(slices: list[TomogramSlice], pos: int, eps_e: float,
                 c_barrier: float) -> np.ndarray:
    sl = slices[pos]
    if sl.cost is None:
        raise ValueError("slice has no cost layer; evaluate the tomogram first")
    trav = sl.ground.valid & (sl.cost.values < c_barrier)
    below = slices[pos - 1] if pos > 0 else None
    above = slices[pos + 1] if pos + 1 < len(slices) else None
    if (below is not None and below.cost is None) or (above is not None and above.cost is None):
        raise ValueError("neighbor slice has no cost layer")
    return (trav
            & _side_condition(sl, below, eps_e, lower=True)
            & _side_condition(sl, above, eps_e, lower=False))


def unique_cells(tomogram: Tomogram, k: int, eps_e: float = DEFAULT_EPS_E,
                 c_barrier: float = 50.0) -> set[tuple[int, int]]:
    """The (i, j) cells of slice k not covered by the adjacent slices."""
    if not 0 <= k < len(tomogram.slices):
        raise IndexError(f"slice index {k} out of range")
    mask = _unique_mask(tomogram.slices, k, eps_e, c_barrier)
    ii, jj = np.nonzero(mask)
    return set(zip(ii.tolist(), jj.tolist()))


def simplify_tomogram(tomogram: Tomogram, eps_e: float = DEFAULT_EPS_E,
                      c_barrier: float = 50.0) -> Tomogram:
    """Remove redundant slices; indices are reassigned, plane heights kept."""
    slices = list(tomogram.slices)
    while True:
        removed = False
        pos = 0
        while pos < len(slices):
            if len(slices) > 1 and not _unique_mask(slices, pos, eps_e, c_barrier).any():
                del slices[pos]        # the next slice shifts in and is checked next
                removed = True
            else:
                pos += 1
        if not removed:
            break
    out = [TomogramSlice(s.ground, s.ceiling, s.plane_height, idx, s.cost)
           for idx, s in enumerate(slices)]
    return Tomogram(slices=out, d_s=tomogram.d_s, z_min=tomogram.z_min)
