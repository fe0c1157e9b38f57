"""
Ungrounded source/sink baselines
--------------------------------
Four voltage computations for comparison with the grounded solver, all on a
graph with no ground:

  pm          - fixed-point iteration with source pinned to 1 and sink to 0
  region_er   - L^+ (e_src_region - e_sink_region - (p_s - p_g))
  density_er  - L^+ (p_s e_s - p_g e_g), mean removed
  point_er    - L^+ (e_s - e_g)

L^+ is never formed; every product goes through ``laplacian_solve`` (CG on
the mean-zero subspace).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from .config import ConvergenceError, EmptySourceError, IllPosedError, ValidationError
from .graph_construction import GroundedGraph, SourceRegion, select_source
from .manifold_sampling import PointCloud
from .voltage_solver import SolverConfig, VoltageFunction, _power_iterate

logger = logging.getLogger(__name__)

BASELINE_MODES = ("pm", "region_er", "density_er", "point_er")
CG_TOL = 1e-8
MEAN_ZERO_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SourceSinkSpec:
    source: SourceRegion
    sink: SourceRegion
    mode: str = "region_er"
    # representative nodes (nearest sample to each region centre)
    source_node: Optional[int] = None
    sink_node: Optional[int] = None

    def validate(self) -> "SourceSinkSpec":
        if self.mode not in BASELINE_MODES:
            raise ValidationError(
                f"unknown baseline mode {self.mode!r}; choose from {', '.join(BASELINE_MODES)}",
                field="mode",
            )
        if self.source.size == 0 or self.sink.size == 0:
            raise EmptySourceError("source and sink regions must both contain a node")
        if np.intersect1d(self.source.mask, self.sink.mask).size:
            raise ValidationError("source and sink regions overlap", field="sink")
        if self.mode in ("density_er", "point_er"):
            if self.source_node is None or self.sink_node is None:
                raise ValidationError(f"{self.mode} needs source_node and sink_node", field="source_node")
            if self.source_node == self.sink_node:
                raise ValidationError("source_node and sink_node coincide", field="sink_node")
        return self

    def with_mode(self, mode: str) -> "SourceSinkSpec":
        return SourceSinkSpec(self.source, self.sink, mode, self.source_node, self.sink_node).validate()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "source": self.source.to_dict(),
            "sink": self.sink.to_dict(),
            "source_node": self.source_node,
            "sink_node": self.sink_node,
        }


def _nearest(points: np.ndarray, center: np.ndarray) -> int:
    return int(np.argmin(np.linalg.norm(points - center, axis=1)))


def make_source_sink(
    cloud: PointCloud,
    source_center: np.ndarray,
    sink_center: np.ndarray,
    radius: float,
    mode: str = "region_er",
) -> SourceSinkSpec:
    """Source and sink balls of a common radius plus their nearest samples."""
    source = select_source(cloud, source_center, radius)
    sink = select_source(cloud, sink_center, radius)
    spec = SourceSinkSpec(
        source=source,
        sink=sink,
        mode=mode,
        source_node=_nearest(cloud.points, source.center),
        sink_node=_nearest(cloud.points, sink.center),
    )
    return spec.validate()


# -------------------------
# PM
# -------------------------
def solve_pm(
    graph: GroundedGraph, spec: SourceSinkSpec, cfg: Optional[SolverConfig] = None
) -> VoltageFunction:
    """Source pinned to 1, sink to 0, every other node the weighted mean of its neighbors.

    The ground is ignored.  Components that touch neither constraint set
    have no determined value; they come back as 0 with a warning.
    """
    spec.validate()
    cfg = (cfg or SolverConfig()).validate()
    n = graph.n
    is_src = spec.source.indicator(n)
    is_sink = spec.sink.indicator(n)
    pinned = is_src | is_sink

    n_comp, labels = graph.components()
    touched = np.zeros(n_comp, dtype=bool)
    touched[labels[pinned]] = True
    floating = ~touched[labels]
    if floating.any():
        logger.warning("pm: %d node(s) in floating components set to 0", int(floating.sum()))

    values = np.zeros(n)
    free = np.flatnonzero(~pinned & ~floating)
    if free.size:
        W_f = graph.adjacency[free]
        W_ff = W_f[:, free].tocsr()
        denom = graph.degree[free]
        b = np.asarray(W_f @ is_src.astype(float)).ravel() / denom
        u, iters, res, _, ok = _power_iterate(W_ff, denom, b, cfg.tol, int(cfg.max_iters))
        values[free] = np.clip(u, 0.0, 1.0)
        logger.info("pm: iterations=%d residual=%.2e converged=%s", iters, res, ok)
    values[is_src] = 1.0
    values[is_sink] = 0.0
    return VoltageFunction(values, spec.source)


# -------------------------
# Laplacian pseudo-inverse products
# -------------------------
def _require_connected(graph: GroundedGraph) -> None:
    n_comp, _ = graph.components()
    if n_comp != 1:
        raise IllPosedError(f"graph is disconnected ({n_comp} components); L^+ products are undefined")


def laplacian_solve(
    graph: GroundedGraph, rhs: np.ndarray, tol: float = CG_TOL, max_iters: Optional[int] = None
) -> np.ndarray:
    """Mean-zero x with L x = rhs, by conjugate gradients re-centred every step."""
    b = np.asarray(rhs, dtype=float).ravel()
    if b.size != graph.n:
        raise ValidationError(f"rhs has length {b.size}, graph has {graph.n} nodes", field="rhs")
    if abs(b.sum()) > MEAN_ZERO_TOL * max(1.0, float(np.abs(b).sum())):
        raise ValidationError(f"rhs must sum to zero (sum={b.sum():.3e})", field="rhs")
    _require_connected(graph)

    b = b - b.mean()
    b_norm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if b_norm == 0.0:
        return x
    L = graph.laplacian()
    cap = int(max_iters) if max_iters is not None else 20 * graph.n

    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    rel = 1.0
    for it in range(1, cap + 1):
        Ap = L @ p
        alpha = rs / float(p @ Ap)
        x += alpha * p
        x -= x.mean()
        r -= alpha * Ap
        r -= r.mean()
        rs_next = float(r @ r)
        if math.sqrt(rs_next) <= tol * b_norm:
            # recursive residual drifts; confirm against the true one and restart if needed
            r = b - L @ x
            r -= r.mean()
            rs_next = float(r @ r)
            rel = math.sqrt(rs_next) / b_norm
            if rel <= tol:
                logger.debug("cg converged in %d iterations (relative residual %.2e)", it, rel)
                return x - x.mean()
            p = r.copy()
            rs = rs_next
            continue
        p = r + (rs_next / rs) * p
        rs = rs_next
        rel = math.sqrt(rs) / b_norm
    raise ConvergenceError(f"conjugate gradients did not converge in {cap} iterations", rel)


def _rhs(graph: GroundedGraph, spec: SourceSinkSpec) -> np.ndarray:
    n = graph.n
    e_src = spec.source.indicator(n).astype(float)
    e_sink = spec.sink.indicator(n).astype(float)
    p_s, p_g = e_src.mean(), e_sink.mean()
    if spec.mode == "region_er":
        return e_src - e_sink - (p_s - p_g)
    rhs = np.zeros(n)
    if spec.mode == "density_er":
        rhs[spec.source_node] = p_s
        rhs[spec.sink_node] -= p_g
        return rhs - rhs.mean()
    rhs[spec.source_node] = 1.0
    rhs[spec.sink_node] = -1.0
    return rhs


def er_voltage(graph: GroundedGraph, spec: SourceSinkSpec) -> VoltageFunction:
    """Mean-zero potential for the region/density/point right-hand sides."""
    spec.validate()
    if spec.mode == "pm":
        raise ValidationError("er_voltage handles region_er, density_er and point_er", field="mode")
    return VoltageFunction(laplacian_solve(graph, _rhs(graph, spec)), spec.source)


def effective_resistance(graph: GroundedGraph, l: int, k: int) -> float:
    """(e_l - e_k)^T L^+ (e_l - e_k)."""
    if not (0 <= l < graph.n and 0 <= k < graph.n):
        raise ValidationError(f"node index out of range for n={graph.n}", field="node")
    if l == k:
        return 0.0
    rhs = np.zeros(graph.n)
    rhs[l], rhs[k] = 1.0, -1.0
    x = laplacian_solve(graph, rhs)
    return max(0.0, float(x[l] - x[k]))


def run_baseline(
    graph: GroundedGraph, spec: SourceSinkSpec, method: str, cfg: Optional[SolverConfig] = None
) -> VoltageFunction:
    """Dispatch on a method name (``region-er`` and ``region_er`` both accepted)."""
    mode = method.replace("-", "_")
    if mode == "er":
        mode = "point_er"
    spec = spec.with_mode(mode)
    if mode == "pm":
        return solve_pm(graph.with_rho(0.0), spec, cfg)
    return er_voltage(graph, spec)
