"""Compiled kernels for Vietoris-Rips persistence in dimensions 0 and 1."""

from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.typed import Dict, List


@njit(cache=True)
def kruskal(n, ei, ej):
    """Indices (into the sorted edge list) of minimum spanning forest edges."""
    parent = np.arange(n)
    used = np.zeros(ei.size, np.bool_)
    merged = 0
    for e in range(ei.size):
        a = ei[e]
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        b = ej[e]
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        if a != b:
            if a < b:
                parent[b] = a
            else:
                parent[a] = b
            used[e] = True
            merged += 1
            if merged == n - 1:
                break
    return used


@njit(cache=True)
def _symdiff(a, b):
    out = np.empty(a.size + b.size, np.int64)
    i = 0
    j = 0
    m = 0
    while i < a.size and j < b.size:
        if a[i] < b[j]:
            out[m] = a[i]
            i += 1
            m += 1
        elif b[j] < a[i]:
            out[m] = b[j]
            j += 1
            m += 1
        else:
            i += 1
            j += 1
    while i < a.size:
        out[m] = a[i]
        i += 1
        m += 1
    while j < b.size:
        out[m] = b[j]
        j += 1
        m += 1
    return out[:m]


@njit(cache=True)
def _coboundary(a, b, e_rank, rank, thr_rank, n, out):
    """Keys of the triangles containing edge (a, b) that enter by ``thr_rank``.

    A triangle key is ``diameter_rank * n**3 + lexicographic_index`` so that
    integer order equals filtration order with lexicographic tie-breaking.
    """
    n2 = n * n
    n3 = n2 * n
    m = 0
    for c in range(n):
        if c == a or c == b:
            continue
        r = max(e_rank, rank[a, c], rank[b, c])
        if r > thr_rank:
            continue
        if c < a:
            lex = c * n2 + a * n + b
        elif c < b:
            lex = a * n2 + c * n + b
        else:
            lex = a * n2 + b * n + c
        out[m] = r * n3 + lex
        m += 1
    return m


@njit(cache=True)
def reduce_h1(rank, thr_rank, ei, ej, er, mst):
    """Dimension-1 persistence pairs by coboundary-matrix reduction.

    ``rank`` holds dense ranks of the pairwise distances and ``er`` the rank
    of every edge, edges being listed in filtration order.  Columns are
    processed from the last edge to the first; spanning-tree edges are
    cleared because they already kill a 0-dimensional class.  Columns that
    need no reduction are not stored and are rebuilt on demand.

    Returns birth ranks, death ranks and an "unpaired" flag per class.
    """
    n = rank.shape[0]
    n3 = n * n * n
    owner = Dict.empty(key_type=types.int64, value_type=types.int64)
    stored = List()
    stored.append(np.empty(0, np.int64))
    births = np.empty(er.size, np.int64)
    deaths = np.empty(er.size, np.int64)
    unpaired = np.zeros(er.size, np.bool_)
    npairs = 0
    buf = np.empty(n, np.int64)
    for e in range(er.size - 1, -1, -1):
        if mst[e]:
            continue
        m = _coboundary(ei[e], ej[e], er[e], rank, thr_rank, n, buf)
        births[npairs] = er[e]
        if m == 0:
            deaths[npairs] = thr_rank
            unpaired[npairs] = True
            npairs += 1
            continue
        pivot = buf[0]
        for q in range(1, m):
            if buf[q] < pivot:
                pivot = buf[q]
        if pivot not in owner:
            # column already reduced; remember its edge (encoded as -e-1)
            owner[pivot] = -e - 1
            deaths[npairs] = pivot // n3
            npairs += 1
            continue
        col = np.sort(buf[:m])
        other = np.empty(n, np.int64)
        while col.size > 0 and col[0] in owner:
            slot = owner[col[0]]
            if slot < 0:
                f = -slot - 1
                k = _coboundary(ei[f], ej[f], er[f], rank, thr_rank, n, other)
                col = _symdiff(col, np.sort(other[:k]))
            else:
                col = _symdiff(col, stored[slot])
        if col.size > 0:
            owner[col[0]] = len(stored)
            stored.append(col)
            deaths[npairs] = col[0] // n3
        else:
            deaths[npairs] = thr_rank
            unpaired[npairs] = True
        npairs += 1
    return births[:npairs], deaths[:npairs], unpaired[:npairs]


@njit(cache=True)
def maxmin_order(points, k, seed):
    """Greedy farthest-point selection; ties go to the lowest index."""
    n = points.shape[0]
    dim = points.shape[1]
    k = min(k, n)
    chosen = np.empty(k, np.int64)
    mind = np.full(n, np.inf)
    taken = np.zeros(n, np.bool_)
    cur = seed
    for s in range(k):
        chosen[s] = cur
        taken[cur] = True
        best = -1.0
        nxt = 0
        for p in range(n):
            if taken[p]:
                continue
            acc = 0.0
            for q in range(dim):
                diff = points[p, q] - points[cur, q]
                acc += diff * diff
            d = np.sqrt(acc)
            if d < mind[p]:
                mind[p] = d
            if mind[p] > best:
                best = mind[p]
                nxt = p
        cur = nxt
    return chosen
