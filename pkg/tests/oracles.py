"""Independent reference implementations used only to check the library."""

import heapq
import math

import numpy as np

SQRT2 = math.sqrt(2.0)

NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def inflate_bruteforce(cost, kernel_weights):
    """O(n^2 k^2) reference: loop over every kernel offset with shifted views.

    Cells outside the map contribute nothing. All arithmetic stays float32 so
    the comparison against the library can be bit-exact.
    """
    cost = np.asarray(cost, dtype=np.float32)
    kernel_weights = np.asarray(kernel_weights, dtype=np.float32)
    side = kernel_weights.shape[0]
    ctr = side // 2
    rows, cols = cost.shape
    out = np.zeros_like(cost)
    for m in range(side):
        for n in range(side):
            w = kernel_weights[m, n]
            if w <= 0:
                continue
            di, dj = m - ctr, n - ctr
            i0, i1 = max(0, -di), min(rows, rows - di)
            j0, j1 = max(0, -dj), min(cols, cols - dj)
            if i0 >= i1 or j0 >= j1:
                continue
            contrib = w * cost[i0 + di:i1 + di, j0 + dj:j1 + dj]
            np.maximum(out[i0:i1, j0:j1], contrib, out=out[i0:i1, j0:j1])
    return out


def inflate_tripleloop(cost, kernel_weights):
    """Tiny-map reference with explicit per-cell loops (slow but transparent)."""
    cost = np.asarray(cost, dtype=np.float32)
    kernel_weights = np.asarray(kernel_weights, dtype=np.float32)
    side = kernel_weights.shape[0]
    ctr = side // 2
    rows, cols = cost.shape
    out = np.zeros_like(cost)
    for i in range(rows):
        for j in range(cols):
            best = np.float32(0.0)
            for m in range(side):
                for n in range(side):
                    si, sj = i + m - ctr, j + n - ctr
                    if 0 <= si < rows and 0 <= sj < cols:
                        v = kernel_weights[m, n] * cost[si, sj]
                        if v > best:
                            best = v
            out[i, j] = best
    return out


def dijkstra_distances(graph, src):
    """Plain Dijkstra over a ReferenceGraph's directed edge list."""
    n = len(graph.nodes)
    adj = [[] for _ in range(n)]
    for u, v, w in graph.edges:
        adj[u].append((v, w))
    dist = [math.inf] * n
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def astar_grid_2d(cost, res, c_barrier, start, goal):
    """Single-layer grid A* with octile heuristic and (f, h, order) tie-breaks.

    Mirrors the textbook formulation: edge cost = target cell cost plus step
    length, consistent heuristic, closed set, lazy heap deletion. Returns
    (total_cost, path, expansions); path is a list of (i, j).
    """
    cost = np.asarray(cost)
    rows, cols = cost.shape
    diag = res * SQRT2

    def octile(i, j):
        di, dj = abs(i - goal[0]), abs(j - goal[1])
        lo, hi = min(di, dj), max(di, dj)
        return res * (hi - lo) + diag * lo

    g = {start: 0.0}
    parent = {start: None}
    closed = set()
    h0 = octile(*start)
    heap = [(h0, h0, 0, start)]
    order = 1
    expanded = 0
    while heap:
        _, _, _, u = heapq.heappop(heap)
        if u in closed:
            continue
        closed.add(u)
        expanded += 1
        if u == goal:
            path = []
            cur = u
            while cur is not None:
                path.append(cur)
                cur = parent[cur]
            path.reverse()
            return g[u], path, expanded
        gu = g[u]
        for di, dj in NEIGHBOR_OFFSETS:
            ni, nj = u[0] + di, u[1] + dj
            if not (0 <= ni < rows and 0 <= nj < cols):
                continue
            w = cost[ni, nj]
            if not (w < c_barrier) or not np.isfinite(w):
                continue
            v = (ni, nj)
            if v in closed:
                continue
            step = res if (ni == u[0] or nj == u[1]) else diag
            ng = gu + float(w) + step
            if ng < g.get(v, math.inf):
                g[v] = ng
                parent[v] = u
                hv = octile(ni, nj)
                heapq.heappush(heap, (ng + hv, hv, order, v))
                order += 1
    return math.inf, [], expanded
