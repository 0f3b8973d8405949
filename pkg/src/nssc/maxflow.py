"""Max-flow / min-cut by Dinic's blocking-flow algorithm.

Graphs are given as parallel arrays of directed edges.  Capacities are
floats; residuals at or below a small relative tolerance count as
saturated so floating-point dust cannot keep the search alive.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _bfs(n, source, sink, head, nxt, to, res, eps, level, queue):
    for i in range(n):
        level[i] = -1
    level[source] = 0
    qh, qt = 0, 0
    queue[qt] = source
    qt += 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        e = head[u]
        while e != -1:
            v = to[e]
            if level[v] < 0 and res[e] > eps:
                level[v] = level[u] + 1
                queue[qt] = v
                qt += 1
            e = nxt[e]
    return level[sink] >= 0


@njit(cache=True)
def _dinic(n, source, sink, head, nxt, to, res, eps):
    level = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    cur = np.empty(n, dtype=np.int64)
    path = np.empty(n, dtype=np.int64)  # arcs on the current DFS path
    flow = 0.0
    while _bfs(n, source, sink, head, nxt, to, res, eps, level, queue):
        for i in range(n):
            cur[i] = head[i]
        depth = 0
        u = source
        while True:
            if u == sink:
                push = np.inf
                for d in range(depth):
                    if res[path[d]] < push:
                        push = res[path[d]]
                cut_at = -1
                for d in range(depth):
                    a = path[d]
                    res[a] -= push
                    res[a ^ 1] += push
                    if cut_at < 0 and res[a] <= eps:
                        cut_at = d
                flow += push
                # retreat to the tail of the first saturated arc
                depth = cut_at
                u = source if depth == 0 else to[path[depth - 1]]
                continue
            advanced = False
            while cur[u] != -1:
                a = cur[u]
                v = to[a]
                if res[a] > eps and level[v] == level[u] + 1:
                    path[depth] = a
                    depth += 1
                    u = v
                    advanced = True
                    break
                cur[u] = nxt[a]
            if advanced:
                continue
            # dead end: prune u from the level graph and back up
            level[u] = -1
            if depth == 0:
                break
            depth -= 1
            u = to[path[depth] ^ 1]
            cur[u] = nxt[cur[u]]
    return flow


def max_flow(n_nodes, tails, heads, capacities, source, sink):
    """Maximum s-t flow and a minimum cut.

    Parameters
    ----------
    n_nodes : int
    tails, heads : int arrays
        Directed edge endpoints.
    capacities : float array
        Nonnegative capacities.
    source, sink : int

    Returns
    -------
    flow : float
    source_side : bool array
        Nodes reachable from the source in the final residual graph.  The
        edges leaving this set form a minimum cut.
    """
    tails = np.asarray(tails, dtype=np.int64)
    heads = np.asarray(heads, dtype=np.int64)
    caps = np.asarray(capacities, dtype=np.float64)
    if not (tails.shape == heads.shape == caps.shape):
        raise ValueError("edge arrays must have equal length")
    if np.any(caps < 0) or not np.all(np.isfinite(caps)):
        raise ValueError("capacities must be finite and nonnegative")
    if source == sink:
        raise ValueError("source and sink must differ")
    m = tails.size
    # arc 2e is edge e, arc 2e+1 its residual twin
    to = np.empty(2 * m, dtype=np.int64)
    to[0::2] = heads
    to[1::2] = tails
    res = np.zeros(2 * m)
    res[0::2] = caps
    tail_of = np.empty(2 * m, dtype=np.int64)
    tail_of[0::2] = tails
    tail_of[1::2] = heads
    head = np.full(n_nodes, -1, dtype=np.int64)
    nxt = np.full(2 * m, -1, dtype=np.int64)
    for a in range(2 * m - 1, -1, -1):
        u = tail_of[a]
        nxt[a] = head[u]
        head[u] = a
    eps = 1e-12 * max(1.0, float(caps.max()) if m else 1.0)
    flow = _dinic(n_nodes, source, sink, head, nxt, to, res, eps)
    level = np.empty(n_nodes, dtype=np.int64)
    queue = np.empty(n_nodes, dtype=np.int64)
    _bfs(n_nodes, source, sink, head, nxt, to, res, eps, level, queue)
    return float(flow), level >= 0


def cut_capacity(tails, heads, capacities, source_side):
    """Total capacity of edges from the source side to the sink side."""
    tails = np.asarray(tails)
    heads = np.asarray(heads)
    side = np.asarray(source_side, dtype=bool)
    crossing = side[tails] & ~side[heads]
    return float(np.sum(np.asarray(capacities, dtype=float)[crossing]))
