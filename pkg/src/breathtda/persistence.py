"""Persistence diagrams of time series.

Two filtrations are supported:

* sublevel sets of the piecewise-linear interpolation of a 1-D signal
  (dimension 0, elder rule), and
* Vietoris-Rips complexes of Takens delay embeddings (dimensions 0 and 1),
  optionally after greedy maxmin subsampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _rips
from .signal import TimeSeries

FiltrationKind = Literal["sublevel", "rips"]


class PersistenceError(ValueError):
    pass


class TooLargeError(PersistenceError):
    """Point cloud exceeds the Rips size cap; subsample first."""


@dataclass(frozen=True)
class PersistenceDiagram:
    """Multiset of ``(birth, death)`` pairs; ``death`` may be ``inf``.

    ``n_truncated`` counts dimension-1 classes that were still alive at the
    truncation radius and were closed there.
    """

    points: NDArray[np.float64]
    dim: int = 0
    kind: FiltrationKind = "sublevel"
    n_truncated: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if pts.size and np.any(~(pts[:, 1] > pts[:, 0])):
            raise PersistenceError("every diagram point needs death > birth")
        if self.dim not in (0, 1):
            raise PersistenceError(f"unsupported homology dimension {self.dim}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def births(self) -> NDArray[np.float64]:
        return self.points[:, 0]

    @property
    def deaths(self) -> NDArray[np.float64]:
        return self.points[:, 1]

    def sorted_points(self) -> NDArray[np.float64]:
        """Points in lexicographic (birth, death) order, for comparisons."""
        if not len(self):
            return self.points
        order = np.lexsort((self.points[:, 1], self.points[:, 0]))
        return self.points[order]


def _values(x: TimeSeries | ArrayLike) -> NDArray[np.float64]:
    if isinstance(x, TimeSeries):
        return x.samples
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _critical_indices(v: NDArray[np.float64]) -> NDArray[np.int64]:
    """Endpoints and strict turning points after collapsing flat runs."""
    keep = np.ones(v.size, dtype=bool)
    keep[1:] = v[1:] != v[:-1]
    idx = np.flatnonzero(keep)
    if idx.size <= 2:
        return idx
    w = v[idx]
    # compare signs rather than multiplying, which can underflow to zero
    step = np.sign(np.diff(w))
    turn = step[:-1] != step[1:]
    return np.concatenate(([idx[0]], idx[1:-1][turn], [idx[-1]]))


def sublevel_pd0(x: TimeSeries | ArrayLike) -> PersistenceDiagram:
    """0-dimensional sublevel-set persistence of a sampled signal.

    Local minima give births and the merging maxima deaths; at each merge the
    component with the lower birth survives (earlier index on ties).  The
    global minimum carries the only infinite bar.
    """
    v = _values(x)
    if v.size == 0:
        raise PersistenceError("sublevel persistence of an empty signal")
    crit = _critical_indices(v)
    w = v[crit]
    m = w.size
    order = np.lexsort((np.arange(m), w))
    parent = np.full(m, -1)
    birth_pos = np.arange(m)

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    pairs: list[tuple[float, float]] = []
    for p in order:
        parent[p] = p
        roots = [find(q) for q in (p - 1, p + 1) if 0 <= q < m and parent[q] >= 0]
        if not roots:
            continue
        if len(roots) == 2 and roots[0] != roots[1]:
            r1, r2 = roots
            key1 = (w[birth_pos[r1]], birth_pos[r1])
            key2 = (w[birth_pos[r2]], birth_pos[r2])
            old, young = (r1, r2) if key1 <= key2 else (r2, r1)
            b = w[birth_pos[young]]
            if w[p] > b:
                pairs.append((b, w[p]))
            parent[young] = old
            parent[p] = old
        else:
            parent[p] = roots[0]
    root = find(order[0])
    pairs.append((w[birth_pos[root]], np.inf))
    return PersistenceDiagram(np.array(pairs), dim=0, kind="sublevel")


@dataclass(frozen=True)
class PointCloud:
    points: NDArray[np.float64]

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise PersistenceError("point cloud must be an (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise PersistenceError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def takens_embed(x: TimeSeries | ArrayLike, d: int, tau_samples: int) -> PointCloud:
    """Delay vectors ``[x[n], x[n+tau], ..., x[n+(d-1)tau]]``."""
    v = _values(x)
    if d < 1 or tau_samples < 1:
        raise PersistenceError("embedding dimension and delay must be >= 1")
    span = (d - 1) * tau_samples
    count = v.size - span
    if count < 1:
        raise PersistenceError(
            f"series of length {v.size} too short for d={d}, tau={tau_samples}"
        )
    cols = [v[q * tau_samples : q * tau_samples + count] for q in range(d)]
    return PointCloud(np.column_stack(cols))


def maxmin_subsample(pc: PointCloud, k: int, seed_index: int = 0) -> PointCloud:
    """Greedy farthest-point subsample of ``min(k, n)`` points in selection order."""
    if k < 1:
        raise PersistenceError("subsample size must be >= 1")
    if not 0 <= seed_index < len(pc):
        raise PersistenceError(f"seed index {seed_index} out of range")
    idx = _rips.maxmin_order(np.ascontiguousarray(pc.points), int(k), int(seed_index))
    return PointCloud(pc.points[idx])


def pairwise_distances(points: NDArray[np.float64]) -> NDArray[np.float64]:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def enclosing_radius(dist: NDArray[np.float64]) -> float:
    """Smallest radius at which some vertex is adjacent to all others."""
    return float(dist.max(axis=1).min()) if dist.size else 0.0


def rips_pd(pc: PointCloud, max_dim: int = 1, n_cap: int = 256) -> list[PersistenceDiagram]:
    """Vietoris-Rips persistence diagrams for dimensions ``0..max_dim``.

    The filtration is cut at the enclosing radius; beyond it every Rips
    complex is a cone, so no finite pair is lost.  Zero-persistence pairs
    are dropped.  Each diagram's ``meta`` records the enclosing radius.
    """
    if max_dim not in (0, 1):
        raise PersistenceError("max_dim must be 0 or 1")
    n = len(pc)
    if n > n_cap:
        raise TooLargeError(f"{n} points exceed the Rips cap of {n_cap}")
    dist = pairwise_distances(pc.points)
    radius = enclosing_radius(dist)
    meta = {"enclosing_radius": radius}

    iu, ju = np.triu_indices(n, k=1)
    w = dist[iu, ju]
    keep = w <= radius
    iu, ju, w = iu[keep], ju[keep], w[keep]
    order = np.lexsort((ju, iu, w))
    ei, ej, ed = iu[order], ju[order], w[order]
    mst = _rips.kruskal(n, ei, ej)

    h0_deaths = ed[mst]
    h0 = [(0.0, d) for d in h0_deaths if d > 0.0] + [(0.0, np.inf)]
    out = [PersistenceDiagram(np.array(h0), dim=0, kind="rips", meta=meta)]
    if max_dim == 0:
        return out

    levels, rank = np.unique(dist, return_inverse=True)
    rank = rank.reshape(n, n).astype(np.int64)
    thr_rank = int(np.searchsorted(levels, radius))
    b_rank, d_rank, unpaired = _rips.reduce_h1(
        rank, thr_rank, ei.astype(np.int64), ej.astype(np.int64), rank[ei, ej], mst
    )
    births, deaths = levels[b_rank], levels[d_rank]
    live = deaths > births
    h1 = np.column_stack((births[live], deaths[live]))
    out.append(
        PersistenceDiagram(
            h1, dim=1, kind="rips", n_truncated=int(unpaired[live].sum()), meta=meta
        )
    )
    return out
