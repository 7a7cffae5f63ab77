"""Greedy edge-matching heuristic for the open-path travelling-salesman problem."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

_EXACT_LIMIT = 1500


def path_length(points, order=None) -> float:
    p = np.asarray(points, dtype=np.float64)
    if order is not None:
        p = p[np.asarray(order)]
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


class _Fragments:
    """Union-find over path fragments plus per-node degree."""

    def __init__(self, m):
        self.parent = np.arange(m)
        self.degree = np.zeros(m, dtype=np.int64)
        self.adj = [[] for _ in range(m)]
        self.edges = 0

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def try_join(self, a, b) -> bool:
        if a == b or self.degree[a] >= 2 or self.degree[b] >= 2:
            return False
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        self.degree[a] += 1
        self.degree[b] += 1
        self.adj[a].append(b)
        self.adj[b].append(a)
        self.edges += 1
        return True


def _greedy_pass(frag: _Fragments, i, j, d, target):
    order = np.argsort(d, kind="stable")
    for e in order:
        frag.try_join(int(i[e]), int(j[e]))
        if frag.edges == target:
            return


def tsp_greedy(points, candidates: int = 16) -> np.ndarray:
    """Order points into an open path with the greedy edge heuristic.

    Edges are accepted shortest first whenever both endpoints still have
    degree < 2 and no cycle is closed.  Up to ``_EXACT_LIMIT`` points every pair
    is a candidate; above that the first pass uses the ``candidates`` nearest
    neighbours of each point and the remaining fragment ends are then joined
    greedily over all their pairs.  Points are only reordered, never moved.
    The returned path starts at the end nearer to the origin.
    """
    p = np.asarray(points, dtype=np.float64)
    m = len(p)
    if m < 2:
        raise ValueError("tsp_greedy needs at least 2 points")
    frag = _Fragments(m)
    if m <= _EXACT_LIMIT:
        i, j = np.triu_indices(m, 1)
        d = np.linalg.norm(p[i] - p[j], axis=1)
        _greedy_pass(frag, i, j, d, m - 1)
    else:
        k = min(candidates, m - 1)
        dist, nbr = cKDTree(p).query(p, k=k + 1)
        i = np.repeat(np.arange(m), k)
        j = nbr[:, 1:].ravel()
        keep = i < j
        _greedy_pass(frag, i[keep], j[keep], dist[:, 1:].ravel()[keep], m - 1)
        while frag.edges < m - 1:
            ends = np.flatnonzero(frag.degree < 2)
            a, b = np.triu_indices(len(ends), 1)
            a, b = ends[a], ends[b]
            d = np.linalg.norm(p[a] - p[b], axis=1)
            _greedy_pass(frag, a, b, d, m - 1)

    ends = np.flatnonzero(frag.degree < 2)
    start = int(ends[np.argmin(np.linalg.norm(p[ends], axis=1))]) if len(ends) else 0
    order = [start]
    prev = -1
    cur = start
    for _ in range(m - 1):
        nxt = frag.adj[cur][0] if frag.adj[cur][0] != prev else frag.adj[cur][1]
        prev, cur = cur, nxt
        order.append(cur)
    return np.asarray(order, dtype=np.int64)


def brute_force_path(points):
    """Optimal open path by enumeration (tiny inputs only).  Test oracle."""
    from itertools import permutations

    p = np.asarray(points, dtype=np.float64)
    m = len(p)
    orders = np.array([q for q in permutations(range(m)) if q[0] < q[-1]], dtype=np.int64)
    steps = np.linalg.norm(np.diff(p[orders], axis=1), axis=2).sum(axis=1)
    best = int(np.argmin(steps))
    return float(steps[best]), orders[best]
