"""A* search across tomogram slices with gateway transitions.

Cells at the same (i, j) whose ground elevations agree across adjacent slices
are the same 3D node; the node cost is the minimum travel cost among the
co-located cells. The search therefore switches slices for free wherever an
adjacent slice holds the truer (lower) cost, which is exactly the gateway
behavior. Edge cost = node cost of the target + planimetric step length.

A same-slice move additionally requires the source cell to be traversable on
the slice it moves along; otherwise a low surface that stays visible in high
slices would gain edges onto cells whose high slice already shows a much
higher surface, i.e. a vertical teleport across a cliff.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .tomogram import Tomogram

SQRT2 = math.sqrt(2.0)
DEFAULT_EPS_E = 1e-6

# fixed neighbor order; the reference 2D A* in the tests mirrors it
_NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


class PlanningError(RuntimeError):
    pass


class SnapError(PlanningError):
    """Start or goal does not land on any traversable cell."""


class NoPathError(PlanningError):
    """The endpoints snap correctly but are not connected."""


@dataclass
class PathResult:
    """A planned path: one row per waypoint, plus search statistics."""

    xyz: np.ndarray            # (N, 3) world coordinates, z = ground elevation
    slice_index: np.ndarray    # (N,) slice holding the node's cheapest cell
    cost_so_far: np.ndarray    # (N,) accumulated edge cost
    expanded: int              # node visits N_s

    @property
    def total_cost(self) -> float:
        return float(self.cost_so_far[-1])

    def __len__(self):
        return self.xyz.shape[0]


class _PlannerContext:
    """Dense canonical-node arrays derived from an evaluated tomogram."""

    def __init__(self, tomogram: Tomogram, eps_e: float, c_barrier: float):
        self.tomogram = tomogram
        self.eps_e = float(eps_e)
        self.c_barrier = float(c_barrier)
        self.res = float(tomogram.resolution)
        self.origin = tomogram.origin
        elev = tomogram.ground_stack()
        cost = tomogram.cost_stack()
        K = elev.shape[0]
        valid = np.isfinite(elev)
        # merge runs of equal elevation across adjacent slices
        eq = np.zeros_like(valid)
        if K > 1:
            e64 = np.where(valid, elev, 0.0).astype(np.float64)
            eq[1:] = valid[1:] & valid[:-1] & (np.abs(e64[1:] - e64[:-1]) <= eps_e)
        canon = np.zeros(elev.shape, dtype=np.int32)
        for k in range(1, K):
            canon[k] = np.where(eq[k], canon[k - 1], k)
        # node cost: run-minimum of the member costs, broadcast to every member
        cn = np.where(valid, cost, np.float32(np.inf))
        for k in range(1, K):
            cn[k] = np.where(eq[k], np.minimum(cn[k], cn[k - 1]), cn[k])
        for k in range(K - 2, -1, -1):
            cn[k] = np.where(eq[k + 1], cn[k + 1], cn[k])
        self.elev = elev
        self.cost = cost
        self.valid = valid
        self.canon = canon
        self.cn = cn

    def snap(self, point, tol: float):
        """Nearest traversable node for a query position, or None."""
        x, y, z = float(point[0]), float(point[1]), float(point[2])
        K, R, C = self.elev.shape
        i = math.floor((y - self.origin[1]) / self.res + 0.5)
        j = math.floor((x - self.origin[0]) / self.res + 0.5)
        if not (0 <= i < R and 0 <= j < C):
            return None
        best = None
        for k in range(K):
            if not self.valid[k, i, j]:
                continue
            dz = abs(float(self.elev[k, i, j]) - z)
            if dz > tol:
                continue
            key = (dz, float(self.cost[k, i, j]), k)
            if best is None or key < best[0]:
                best = (key, k)
        if best is None:
            return None
        k0 = int(self.canon[best[1], i, j])
        if not self.cn[k0, i, j] < self.c_barrier:
            return None
        return k0, i, j

    def member_with_min_cost(self, k0, i, j):
        K = self.elev.shape[0]
        best_k, best_c = k0, float(self.cost[k0, i, j])
        k = k0 + 1
        while k < K and self.canon[k, i, j] == k0:
            c = float(self.cost[k, i, j])
            if c < best_c:
                best_k, best_c = k, c
            k += 1
        return best_k


def _context(tomogram: Tomogram, eps_e: float, c_barrier: float) -> _PlannerContext:
    cache = getattr(tomogram, "_planner_ctx", None)
    if cache is not None and cache.eps_e == eps_e and cache.c_barrier == c_barrier:
        return cache
    ctx = _PlannerContext(tomogram, eps_e, c_barrier)
    tomogram._planner_ctx = ctx
    return ctx


@njit(cache=True, inline="always")
def _heap_less(hf, hh, ho, a, b):
    if hf[a] != hf[b]:
        return hf[a] < hf[b]
    if hh[a] != hh[b]:
        return hh[a] < hh[b]
    return ho[a] < ho[b]


@njit(cache=True)
def _astar_core(cn, cost, canon, c_barrier, res, sk, si, sj, gk, gi, gj):
    K, R, C = cn.shape
    n = K * R * C
    plane = R * C
    g_score = np.full(n, np.inf)
    parent = np.full(n, -2, np.int64)
    closed = np.zeros(n, np.uint8)

    cap = 1 << 12
    hf = np.empty(cap)
    hh = np.empty(cap)
    ho = np.empty(cap, np.int64)
    hn = np.empty(cap, np.int64)
    diag = res * SQRT2

    start_id = (sk * R + si) * C + sj
    goal_id = (gk * R + gi) * C + gj
    g_score[start_id] = 0.0
    parent[start_id] = -1
    dsi = abs(si - gi)
    dsj = abs(sj - gj)
    lo = dsi if dsi < dsj else dsj
    hi = dsi if dsi > dsj else dsj
    hf[0] = res * (hi - lo) + diag * lo
    hh[0] = hf[0]
    ho[0] = 0
    hn[0] = start_id
    size = 1
    order = 1
    expanded = 0
    found = False

    while size > 0:
        # pop the lexicographic minimum (f, h, insertion order)
        u = hn[0]
        size -= 1
        hf[0] = hf[size]
        hh[0] = hh[size]
        ho[0] = ho[size]
        hn[0] = hn[size]
        c = 0
        while True:
            l = 2 * c + 1
            r = 2 * c + 2
            m = c
            if l < size and _heap_less(hf, hh, ho, l, m):
                m = l
            if r < size and _heap_less(hf, hh, ho, r, m):
                m = r
            if m == c:
                break
            hf[c], hf[m] = hf[m], hf[c]
            hh[c], hh[m] = hh[m], hh[c]
            ho[c], ho[m] = ho[m], ho[c]
            hn[c], hn[m] = hn[m], hn[c]
            c = m

        if closed[u]:
            continue
        closed[u] = 1
        expanded += 1
        if u == goal_id:
            found = True
            break

        uk = u // plane
        rem = u - uk * plane
        ui = rem // C
        uj = rem - ui * C
        gu = g_score[u]

        k2 = uk
        while k2 < K and canon[k2, ui, uj] == uk:
            # a move along slice k2 requires standing on it: the source cell
            # must be traversable on that slice's own cost map
            if not (cost[k2, ui, uj] < c_barrier):
                k2 += 1
                continue
            for d in range(8):
                if d == 0:
                    ni = ui - 1
                    nj = uj - 1
                elif d == 1:
                    ni = ui - 1
                    nj = uj
                elif d == 2:
                    ni = ui - 1
                    nj = uj + 1
                elif d == 3:
                    ni = ui
                    nj = uj - 1
                elif d == 4:
                    ni = ui
                    nj = uj + 1
                elif d == 5:
                    ni = ui + 1
                    nj = uj - 1
                elif d == 6:
                    ni = ui + 1
                    nj = uj
                else:
                    ni = ui + 1
                    nj = uj + 1
                if ni < 0 or ni >= R or nj < 0 or nj >= C:
                    continue
                w = cn[k2, ni, nj]
                if not (w < c_barrier):
                    continue
                tk = canon[k2, ni, nj]
                v = (tk * R + ni) * C + nj
                if closed[v]:
                    continue
                step = res if (ni == ui or nj == uj) else diag
                ng = gu + w + step
                if ng < g_score[v]:
                    g_score[v] = ng
                    parent[v] = u
                    if size == cap:
                        cap2 = cap * 2
                        nf = np.empty(cap2)
                        nh = np.empty(cap2)
                        no_ = np.empty(cap2, np.int64)
                        nn = np.empty(cap2, np.int64)
                        nf[:size] = hf[:size]
                        nh[:size] = hh[:size]
                        no_[:size] = ho[:size]
                        nn[:size] = hn[:size]
                        hf = nf
                        hh = nh
                        ho = no_
                        hn = nn
                        cap = cap2
                    di = ni - gi if ni > gi else gi - ni
                    dj = nj - gj if nj > gj else gj - nj
                    lo = di if di < dj else dj
                    hi = di if di > dj else dj
                    hval = res * (hi - lo) + diag * lo
                    hf[size] = ng + hval
                    hh[size] = hval
                    ho[size] = order
                    hn[size] = v
                    order += 1
                    c = size
                    size += 1
                    while c > 0:
                        p = (c - 1) // 2
                        if _heap_less(hf, hh, ho, c, p):
                            hf[c], hf[p] = hf[p], hf[c]
                            hh[c], hh[p] = hh[p], hh[c]
                            ho[c], ho[p] = ho[p], ho[c]
                            hn[c], hn[p] = hn[p], hn[c]
                            c = p
                        else:
                            break
            k2 += 1

    return found, g_score, parent, expanded


def plan_path(tomogram: Tomogram, start, goal, *, d_min: float | None = None,
              eps_e: float = DEFAULT_EPS_E, c_barrier: float = 50.0) -> PathResult:
    """Cost-optimal path between two 3D positions over the evaluated tomogram.

    Endpoints snap to the nearest cell whose ground elevation lies within
    0.5 * d_min of the query z (d_min defaults to the tomogram's slice
    interval, which the construction couples to the robot's minimum height).
    """
    ctx = _context(tomogram, eps_e, c_barrier)
    tol = 0.5 * (float(d_min) if d_min is not None else tomogram.d_s)
    s = ctx.snap(start, tol)
    if s is None:
        raise SnapError(f"unsnappable start {tuple(float(v) for v in start)}")
    g = ctx.snap(goal, tol)
    if g is None:
        raise SnapError(f"unsnappable goal {tuple(float(v) for v in goal)}")

    found, g_score, parent, expanded = _astar_core(
        ctx.cn, ctx.cost, ctx.canon, np.float32(c_barrier), ctx.res,
        s[0], s[1], s[2], g[0], g[1], g[2],
    )
    if not found:
        raise NoPathError("no path between start and goal")

    K, R, C = ctx.cn.shape
    plane = R * C
    goal_id = (g[0] * R + g[1]) * C + g[2]
    ids = []
    cur = goal_id
    while cur != -1:
        ids.append(cur)
        cur = int(parent[cur])
    ids.reverse()

    n = len(ids)
    xyz = np.empty((n, 3))
    kidx = np.empty(n, dtype=np.int64)
    costs = np.empty(n)
    ox, oy = ctx.origin
    for t, node in enumerate(ids):
        k0 = node // plane
        rem = node - k0 * plane
        i = rem // C
        j = rem - i * C
        km = ctx.member_with_min_cost(int(k0), int(i), int(j))
        xyz[t, 0] = ox + j * ctx.res
        xyz[t, 1] = oy + i * ctx.res
        xyz[t, 2] = float(ctx.elev[k0, i, j])
        kidx[t] = km
        costs[t] = float(g_score[node])
    return PathResult(xyz=xyz, slice_index=kidx, cost_so_far=costs, expanded=int(expanded))


# ---------------------------------------------------------------------------
# Explicit reference graph (test oracle; deliberately plain Python)

@dataclass
class ReferenceGraph:
    nodes: list[tuple[int, int, int]]          # canonical (k, i, j)
    node_cost: list[float]                     # c^N per node
    node_elev: list[float]
    edges: list[tuple[int, int, float]]        # directed (u, v, cost)

    def undirected_pair_count(self) -> int:
        return len({(min(u, v), max(u, v)) for u, v, _ in self.edges})


def build_reference_graph(tomogram: Tomogram, eps_e: float = DEFAULT_EPS_E,
                          c_barrier: float = 50.0) -> ReferenceGraph:
    """Materialize every canonical node and legal edge, straightforwardly."""
    elev = tomogram.ground_stack().astype(np.float64)
    cost = tomogram.cost_stack().astype(np.float64)
    valid = np.isfinite(elev)
    K, R, C = elev.shape
    res = tomogram.resolution

    nodes: list[tuple[int, int, int]] = []
    node_cost: list[float] = []
    node_elev: list[float] = []
    owner: dict[tuple[int, int, int], int] = {}
    for i in range(R):
        for j in range(C):
            k = 0
            while k < K:
                if not valid[k, i, j]:
                    k += 1
                    continue
                run = [k]
                k2 = k + 1
                while k2 < K and valid[k2, i, j] and abs(elev[k2, i, j] - elev[k2 - 1, i, j]) <= eps_e:
                    run.append(k2)
                    k2 += 1
                cn = min(cost[m, i, j] for m in run)
                if cn < c_barrier:
                    idx = len(nodes)
                    nodes.append((run[0], i, j))
                    node_cost.append(cn)
                    node_elev.append(elev[run[0], i, j])
                    for m in run:
                        owner[(m, i, j)] = idx
                k = k2

    edges = []
    seen = set()
    for u, (k0, i, j) in enumerate(nodes):
        k = k0
        while (k, i, j) in owner and owner[(k, i, j)] == u:
            if not cost[k, i, j] < c_barrier:
                k += 1          # cannot stand on this slice to make a move
                continue
            for di, dj in _NEIGHBOR_OFFSETS:
                ni, nj = i + di, j + dj
                if not (0 <= ni < R and 0 <= nj < C):
                    continue
                v = owner.get((k, ni, nj))
                if v is None:
                    continue
                if (u, v) in seen:
                    continue
                seen.add((u, v))
                step = res if (di == 0 or dj == 0) else res * SQRT2
                edges.append((u, v, node_cost[v] + step))
            k += 1
    return ReferenceGraph(nodes=nodes, node_cost=node_cost, node_elev=node_elev, edges=edges)


# ---------------------------------------------------------------------------
# Export

def path_records(path: PathResult) -> list[dict]:
    return [
        {
            "x": float(path.xyz[t, 0]),
            "y": float(path.xyz[t, 1]),
            "z": float(path.xyz[t, 2]),
            "k": int(path.slice_index[t]),
            "cost_so_far": float(path.cost_so_far[t]),
        }
        for t in range(len(path))
    ]


def save_path_json(path: PathResult, out_path):
    with open(out_path, "w") as f:
        json.dump(path_records(path), f, indent=1)
        f.write("\n")


def save_path_csv(path: PathResult, out_path):
    with open(out_path, "w") as f:
        f.write("x,y,z,k,cost_so_far\n")
        for rec in path_records(path):
            f.write(f"{rec['x']:.9g},{rec['y']:.9g},{rec['z']:.9g},{rec['k']},{rec['cost_so_far']:.12g}\n")
