"""
Grounded metric resistor graphs
-------------------------------
Sparse symmetric weights W_ij = k(x_i, x_j) / n, per-node degree sums and a
ground weight rho = rho_g.  Under this convention the discrete denominator
rho_g + (1/n) sum_j k(x_i, x_j) converges to rho + integral of k, so the
user-facing rho_g is the continuum ground weight.

Neighbor search for compactly supported kernels uses ``CellGrid``, a uniform
hash grid with cell size equal to the search radius (exact, not approximate).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .config import EmptySourceError, ValidationError
from .manifold_sampling import KernelSpec, PointCloud

logger = logging.getLogger(__name__)

# beyond this the 3^d neighbor-cell sweep costs more than a KD-tree
GRID_MAX_DIM = 8
# anchors * candidates processed per block
PAIR_BLOCK = 1 << 22


# -------------------------
# Uniform grid neighbor search
# -------------------------
class GridUnavailable(Exception):
    """The grid cannot index this cloud (dimension or key overflow)."""


class CellGrid:
    """Hash grid over a point set with cubic cells of side ``cell``.

    Cell coordinates are padded by one on each side so that neighbor offsets
    never wrap around in the mixed-radix key.
    """

    def __init__(self, points: np.ndarray, cell: float):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2:
            raise ValidationError("grid points must be an (n, d) array", field="points")
        if not (cell > 0.0 and math.isfinite(cell)):
            raise ValidationError(f"cell size must be > 0 (got {cell})", field="cell")
        if pts.shape[1] > GRID_MAX_DIM:
            raise GridUnavailable(f"dimension {pts.shape[1]} > {GRID_MAX_DIM}")
        self.points = pts
        self.cell = float(cell)
        self.origin = pts.min(axis=0)
        coords = np.floor((pts - self.origin) / self.cell).astype(np.int64) + 1
        self.extent = coords.max(axis=0) + 2
        if float(np.prod(self.extent.astype(float))) >= 2.0**62:
            raise GridUnavailable("cell key space overflows int64")
        strides = np.ones(pts.shape[1], dtype=np.int64)
        for k in range(pts.shape[1] - 2, -1, -1):
            strides[k] = strides[k + 1] * self.extent[k + 1]
        self.strides = strides
        self.coords = coords
        keys = coords @ strides
        self.order = np.argsort(keys, kind="stable")
        self.sorted_keys = keys[self.order]
        self.keys = keys
        self.occupancy = max(1, pts.shape[0] // max(1, np.unique(self.sorted_keys).size))

    def _offsets(self, half: bool) -> Iterator[np.ndarray]:
        d = self.points.shape[1]
        for off in itertools.product((-1, 0, 1), repeat=d):
            o = np.asarray(off, dtype=np.int64)
            if half:
                nz = np.flatnonzero(o)
                # keep the zero offset and offsets whose first nonzero entry is +1
                if nz.size and o[nz[0]] < 0:
                    continue
            yield o

    def _expand(
        self, anchor_keys: np.ndarray, anchor_ids: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        left = np.searchsorted(self.sorted_keys, anchor_keys, side="left")
        right = np.searchsorted(self.sorted_keys, anchor_keys, side="right")
        counts = right - left
        total = int(counts.sum())
        if total == 0:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        starts = np.cumsum(counts) - counts
        within = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
        anchors = np.repeat(anchor_ids, counts)
        others = self.order[np.repeat(left, counts) + within]
        return anchors, others

    def _blocks(self, m: int) -> Iterator[slice]:
        # rough per-anchor candidate count from the mean cell occupancy
        step = max(1, PAIR_BLOCK // self.occupancy)
        for s in range(0, m, step):
            yield slice(s, min(m, s + step))

    def pairs_within(self, radius: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All unordered pairs (i < j) with ||x_i - x_j|| <= radius."""
        if radius > self.cell * (1.0 + 1e-12):
            raise ValidationError("search radius exceeds the grid cell size", field="radius")
        n = self.points.shape[0]
        ids = np.arange(n, dtype=np.int64)
        out_i, out_j, out_d = [], [], []
        for o in self._offsets(half=True):
            shift = int(o @ self.strides)
            zero = not o.any()
            for blk in self._blocks(n):
                a, b = self._expand(self.keys[blk] + shift, ids[blk])
                if zero:
                    keep = a < b
                    a, b = a[keep], b[keep]
                if a.size == 0:
                    continue
                dist = np.linalg.norm(self.points[a] - self.points[b], axis=1)
                keep = dist <= radius
                a, b, dist = a[keep], b[keep], dist[keep]
                out_i.append(np.minimum(a, b))
                out_j.append(np.maximum(a, b))
                out_d.append(dist)
        return _sorted_pairs(out_i, out_j, out_d)

    def query(
        self, queries: np.ndarray, radius: float
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(query index, point index, distance) for every point within radius."""
        if radius > self.cell * (1.0 + 1e-12):
            raise ValidationError("search radius exceeds the grid cell size", field="radius")
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        qc = np.floor((q - self.origin) / self.cell).astype(np.int64) + 1
        ids = np.arange(q.shape[0], dtype=np.int64)
        out_q, out_p, out_d = [], [], []
        for o in self._offsets(half=False):
            c = qc + o
            valid = np.all((c >= 0) & (c < self.extent), axis=1)
            if not valid.any():
                continue
            a, b = self._expand(c[valid] @ self.strides, ids[valid])
            if a.size == 0:
                continue
            dist = np.linalg.norm(q[a] - self.points[b], axis=1)
            keep = dist <= radius
            out_q.append(a[keep])
            out_p.append(b[keep])
            out_d.append(dist[keep])
        return _sorted_pairs(out_q, out_p, out_d)


def _sorted_pairs(ii, jj, dd) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not ii:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), np.empty(0, dtype=float)
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    d = np.concatenate(dd)
    order = np.lexsort((j, i))
    return i[order], j[order], d[order]


def radius_pairs(points: np.ndarray, radius: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact fixed-radius pairs (i < j); grid first, KD-tree when the grid is unavailable."""
    try:
        return CellGrid(points, radius).pairs_within(radius)
    except GridUnavailable as exc:
        logger.debug("grid unavailable (%s); using KD-tree", exc)
        tree = cKDTree(points)
        pairs = tree.query_pairs(radius, output_type="ndarray").astype(np.int64)
        if pairs.size == 0:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty.copy(), np.empty(0, dtype=float)
        i, j = pairs[:, 0], pairs[:, 1]
        dist = np.linalg.norm(points[i] - points[j], axis=1)
        keep = dist <= radius
        return _sorted_pairs([i[keep]], [j[keep]], [dist[keep]])


def radius_query(
    points: np.ndarray, queries: np.ndarray, radius: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact (query, point, distance) triples within ``radius``."""
    try:
        return CellGrid(points, radius).query(queries, radius)
    except GridUnavailable:
        tree = cKDTree(points)
        hits = tree.query_ball_point(np.atleast_2d(queries), radius)
        qi = np.repeat(np.arange(len(hits), dtype=np.int64), [len(h) for h in hits])
        pj = np.fromiter(itertools.chain.from_iterable(hits), dtype=np.int64, count=qi.size)
        dist = np.linalg.norm(np.atleast_2d(queries)[qi] - points[pj], axis=1)
        keep = dist <= radius
        return _sorted_pairs([qi[keep]], [pj[keep]], [dist[keep]])


# -------------------------
# Grounded graph
# -------------------------
@dataclass(frozen=True, eq=False)
class GroundedGraph:
    """Immutable weighted graph plus ground weight.

    ``adjacency`` is a symmetric CSR matrix without diagonal; row i lists the
    (neighbor, weight) pairs of node i.  ``degree[i]`` is the row sum.
    """

    n: int
    adjacency: sp.csr_matrix
    degree: np.ndarray
    rho: float
    points: Optional[PointCloud] = None
    kernel: Optional[KernelSpec] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def rho_g(self) -> float:
        return self.rho

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.nnz // 2)

    @property
    def mean_degree(self) -> float:
        return float(self.degree.mean())

    @property
    def max_degree(self) -> float:
        return float(self.degree.max()) if self.n else 0.0

    def neighbors(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        a = self.adjacency
        lo, hi = a.indptr[i], a.indptr[i + 1]
        return a.indices[lo:hi], a.data[lo:hi]

    def weight(self, i: int, j: int) -> float:
        return float(self.adjacency[i, j])

    def edge_list(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Upper-triangle (i < j, weight) arrays in row-major order."""
        upper = sp.triu(self.adjacency, k=1, format="csr")
        upper.sort_indices()
        rows = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(upper.indptr))
        return rows, upper.indices.astype(np.int64), upper.data.copy()

    def with_rho(self, rho: float) -> "GroundedGraph":
        """Same adjacency, different ground weight."""
        if rho < 0.0:
            raise ValidationError(f"rho_g must be >= 0 (got {rho})", field="rho_g")
        return replace(self, rho=float(rho))

    def laplacian(self) -> sp.csr_matrix:
        """Combinatorial Laplacian diag(degree) - W (ground not included)."""
        return (sp.diags(self.degree) - self.adjacency).tocsr()

    def components(self) -> Tuple[int, np.ndarray]:
        return connected_components(self.adjacency, directed=False)

    @classmethod
    def from_edges(
        cls,
        n: int,
        i: np.ndarray,
        j: np.ndarray,
        w: np.ndarray,
        rho: float,
        points: Optional[PointCloud] = None,
    ) -> "GroundedGraph":
        """Assemble a graph from an undirected edge list (any orientation)."""
        if n < 2:
            raise ValidationError(f"a graph needs at least 2 nodes (got {n})", field="n")
        if rho < 0.0:
            raise ValidationError(f"rho_g must be >= 0 (got {rho})", field="rho_g")
        ii = np.asarray(i, dtype=np.int64)
        jj = np.asarray(j, dtype=np.int64)
        ww = np.asarray(w, dtype=float)
        if not (ii.shape == jj.shape == ww.shape):
            raise ValidationError("edge arrays must have equal length", field="edges")
        if ii.size and (min(ii.min(), jj.min()) < 0 or max(ii.max(), jj.max()) >= n):
            raise ValidationError("edge endpoint out of range", field="edges")
        if np.any(ii == jj):
            raise ValidationError("self-loops are not allowed", field="edges")
        if np.any(~(ww > 0.0)):
            raise ValidationError("edge weights must be > 0", field="edges")
        lo, hi = np.minimum(ii, jj), np.maximum(ii, jj)
        key = lo * n + hi
        if np.unique(key).size != key.size:
            raise ValidationError("duplicate edge in edge list", field="edges")
        adjacency = _symmetric_csr(n, lo, hi, ww)
        degree = np.asarray(adjacency.sum(axis=1)).ravel()
        return cls(n=n, adjacency=adjacency, degree=degree, rho=float(rho), points=points)


def _symmetric_csr(n: int, i: np.ndarray, j: np.ndarray, w: np.ndarray) -> sp.csr_matrix:
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    vals = np.concatenate([w, w])
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def build_grounded_graph(cloud: PointCloud, kernel: KernelSpec, rho_g: float) -> GroundedGraph:
    """Grounded metric resistor graph over ``cloud``: W_ij = k(x_i, x_j)/n, rho = rho_g."""
    n = cloud.n
    if n < 2:
        raise ValidationError(f"a graph needs at least 2 points (got {n})", field="n")
    if not rho_g >= 0.0:
        raise ValidationError(f"rho_g must be >= 0 (got {rho_g})", field="rho_g")
    kernel.validate()
    pts = cloud.points

    support = kernel.support_radius
    if math.isfinite(support):
        i, j, dist = radius_pairs(pts, support)
    else:
        # gaussian without cutoff: every pair
        dist = pdist(pts)
        i, j = np.triu_indices(n, k=1)
        i, j = i.astype(np.int64), j.astype(np.int64)

    w = np.asarray(kernel.from_distance(dist), dtype=float) / n
    keep = w > 0.0
    i, j, w = i[keep], j[keep], w[keep]
    adjacency = _symmetric_csr(n, i, j, w)
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    graph = GroundedGraph(
        n=n, adjacency=adjacency, degree=degree, rho=float(rho_g), points=cloud, kernel=kernel
    )
    logger.info(
        "built grounded graph: n=%d edges=%d mean_degree=%.4g rho=%.4g",
        n, graph.edge_count, graph.mean_degree, graph.rho,
    )
    return graph


# -------------------------
# Source regions
# -------------------------
@dataclass(frozen=True, eq=False)
class SourceRegion:
    """Closed Euclidean ball and the sorted node indices it contains."""

    center: np.ndarray
    radius_s: float
    mask: np.ndarray

    @property
    def size(self) -> int:
        return int(self.mask.size)

    def indicator(self, n: int) -> np.ndarray:
        e = np.zeros(n, dtype=bool)
        e[self.mask] = True
        return e

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.linalg.norm(pts - self.center, axis=1) <= self.radius_s

    def to_dict(self) -> Dict[str, Any]:
        return {"center": self.center.tolist(), "radius_s": self.radius_s, "size": self.size}


def select_source(cloud: PointCloud, center: np.ndarray, radius_s: float) -> SourceRegion:
    """Nodes within Euclidean distance ``radius_s`` of ``center``."""
    c = np.atleast_1d(np.asarray(center, dtype=float)).ravel()
    if c.size != cloud.d:
        raise ValidationError(f"center has dimension {c.size}, cloud has {cloud.d}", field="center")
    if not radius_s >= 0.0:
        raise ValidationError(f"source radius must be >= 0 (got {radius_s})", field="radius_s")
    dist = np.linalg.norm(cloud.points - c, axis=1)
    mask = np.flatnonzero(dist <= radius_s).astype(np.int64)
    if mask.size == 0:
        raise EmptySourceError(
            f"empty source: no sampled point within {radius_s} of {c.tolist()}"
        )
    return SourceRegion(center=c, radius_s=float(radius_s), mask=mask)
