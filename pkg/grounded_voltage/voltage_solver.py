"""
Grounded voltage solvers
------------------------
The grounded energy-minimizing voltage is the fixed point of

    v_i = (sum_{j in src} W_ij + sum_{j not in src} W_ij v_j) / (rho + degree_i)

for non-source nodes, with v = 1 on the source.  Three ways to get it:

  * ``solve_grounded_emv``  - the contraction iteration itself (l-inf stopping rule)
  * ``solve_direct_oracle`` - sparse direct solve of the same linear system (small n)
  * ``solve_localized``     - the iteration on an active set grown from the source

plus ``extend_voltage`` for kernel-weighted evaluation at off-sample points.
Every solve is single-threaded and deterministic; solves over one graph
share nothing and may run concurrently.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist
from scipy.sparse.linalg import spsolve

from .config import (
    EmptySourceError,
    IllPosedError,
    SizeLimitError,
    UndefinedExtensionError,
    ValidationError,
    default_max_iters,
    default_tol,
    direct_max_n,
)
from .graph_construction import GroundedGraph, SourceRegion, radius_query
from .manifold_sampling import kernel_matrix

logger = logging.getLogger(__name__)

SOLVER_MODES = ("full_power", "localized", "direct_oracle")


# -------------------------
# Types
# -------------------------
@dataclass(frozen=True)
class SolverConfig:
    tol: float = field(default_factory=default_tol)
    max_iters: int = field(default_factory=default_max_iters)
    mode: str = "full_power"
    tau: Optional[float] = None

    def validate(self) -> "SolverConfig":
        if not (self.tol > 0.0):
            raise ValidationError(f"tol must be > 0 (got {self.tol})", field="tol")
        if int(self.max_iters) < 1:
            raise ValidationError(f"max_iters must be >= 1 (got {self.max_iters})", field="max_iters")
        if self.mode not in SOLVER_MODES:
            raise ValidationError(
                f"unknown solver mode {self.mode!r}; choose from {', '.join(SOLVER_MODES)}",
                field="mode",
            )
        if self.mode == "localized":
            if self.tau is None or not (0.0 < self.tau < 1.0):
                raise ValidationError(f"localized mode needs 0 < tau < 1 (got {self.tau})", field="tau")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"tol": self.tol, "max_iters": self.max_iters, "mode": self.mode, "tau": self.tau}


@dataclass(frozen=True, eq=False)
class VoltageFunction:
    """Per-node voltages.

    Grounded solves give values in [0, 1], exactly 1 on ``source.mask``; the
    ER baselines reuse the type for signed mean-zero potentials.
    """

    values: np.ndarray
    source: SourceRegion
    support: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.values.size)


@dataclass
class SolveReport:
    iterations: int = 0
    final_residual: float = 0.0
    contraction_ratio_observed: float = 0.0
    wall_time: float = 0.0
    converged: bool = True
    # max_i degree_i / (rho + degree_i) over the iterated rows
    contraction_bound: float = 0.0
    mode: str = "full_power"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "contraction_ratio_observed": self.contraction_ratio_observed,
            "contraction_bound": self.contraction_bound,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "mode": self.mode,
        }


# -------------------------
# Shared pieces
# -------------------------
def _check_source(graph: GroundedGraph, source: SourceRegion) -> None:
    if source.mask.size == 0:
        raise EmptySourceError("empty source: no constrained node")
    if source.mask.min() < 0 or source.mask.max() >= graph.n:
        raise ValidationError("source mask refers to nodes outside the graph", field="source")


def _ground_is_degenerate(graph: GroundedGraph, source: SourceRegion) -> bool:
    """True when rho = 0 and every component touches the source (answer: all ones).

    Raises IllPosedError when rho = 0 and some component cannot reach the source.
    """
    if graph.rho > 0.0:
        return False
    n_comp, labels = graph.components()
    touched = np.zeros(n_comp, dtype=bool)
    touched[labels[source.mask]] = True
    if not touched.all():
        raise IllPosedError(
            f"ill-posed: no ground and no source path ({int((~touched).sum())} component(s) "
            "do not touch the source)"
        )
    logger.warning("rho = 0: every component touches the source, returning the constant 1 extension")
    return True


def _free_system(graph: GroundedGraph, rows: np.ndarray, is_src: np.ndarray):
    """Restriction of the fixed-point map to ``rows`` (all non-source).

    Returns (W_rr, src_sum, denom): W restricted to rows x rows, the source
    current sum_{j in src} W_ij, and rho + degree_i.
    """
    W_r = graph.adjacency[rows]
    W_rr = W_r[:, rows].tocsr()
    src_sum = np.asarray(W_r @ is_src.astype(float)).ravel()
    denom = graph.rho + graph.degree[rows]
    return W_rr, src_sum, denom


def _power_iterate(
    W: sp.csr_matrix,
    denom: np.ndarray,
    b: np.ndarray,
    tol: float,
    max_iters: int,
    u0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, int, float, float, bool]:
    """u <- b + D^-1 W u until the l-inf change is <= tol."""
    u = b.copy() if u0 is None else u0.astype(float, copy=True)
    if u.size == 0:
        return u, 0, 0.0, 0.0, True
    prev = math.nan
    ratio = 0.0
    res = math.inf
    for it in range(1, max_iters + 1):
        u_next = b + (W @ u) / denom
        res = float(np.max(np.abs(u_next - u)))
        if prev > 0.0:
            ratio = max(ratio, res / prev)
        u = u_next
        prev = res
        if it % 1000 == 0:
            logger.debug("iteration %d residual %.3e", it, res)
        if res <= tol:
            return u, it, res, ratio, True
    logger.warning("max_iters=%d reached with residual %.3e > tol=%.1e", max_iters, res, tol)
    return u, max_iters, res, ratio, False


def _contraction_bound(graph: GroundedGraph, rows: np.ndarray) -> float:
    if rows.size == 0:
        return 0.0
    deg = graph.degree[rows]
    return float(np.max(deg / (graph.rho + deg)))


def fixed_point_residual(graph: GroundedGraph, source: SourceRegion, values: np.ndarray) -> float:
    """max over non-source i of |v_i - (T v)_i|."""
    v = np.asarray(values, dtype=float).copy()
    v[source.mask] = 1.0
    free = np.setdiff1d(np.arange(graph.n), source.mask, assume_unique=True)
    if free.size == 0:
        return 0.0
    tv = np.asarray(graph.adjacency[free] @ v).ravel() / (graph.rho + graph.degree[free])
    return float(np.max(np.abs(v[free] - tv)))


# -------------------------
# Solvers
# -------------------------
def solve_grounded_emv(
    graph: GroundedGraph, source: SourceRegion, cfg: Optional[SolverConfig] = None
) -> Tuple[VoltageFunction, SolveReport]:
    """Power iteration of the grounded fixed-point map, starting at v0 = b."""
    cfg = (cfg or SolverConfig()).validate()
    _check_source(graph, source)
    t0 = time.perf_counter()
    values = np.zeros(graph.n)
    if _ground_is_degenerate(graph, source):
        values[:] = 1.0
        report = SolveReport(mode="full_power", wall_time=time.perf_counter() - t0, contraction_bound=1.0)
        return VoltageFunction(values, source), report

    is_src = source.indicator(graph.n)
    free = np.flatnonzero(~is_src)
    W_ff, src_sum, denom = _free_system(graph, free, is_src)
    b = src_sum / denom
    u, iters, res, ratio, ok = _power_iterate(W_ff, denom, b, cfg.tol, int(cfg.max_iters))
    values[free] = np.clip(u, 0.0, 1.0)
    values[source.mask] = 1.0
    report = SolveReport(
        iterations=iters,
        final_residual=res,
        contraction_ratio_observed=ratio,
        wall_time=time.perf_counter() - t0,
        converged=ok,
        contraction_bound=_contraction_bound(graph, free),
        mode="full_power",
    )
    logger.info(
        "power solve: n=%d source=%d iterations=%d residual=%.2e ratio=%.4f (bound %.4f)",
        graph.n, source.size, iters, res, ratio, report.contraction_bound,
    )
    return VoltageFunction(values, source), report


def solve_direct_oracle(graph: GroundedGraph, source: SourceRegion) -> VoltageFunction:
    """Sparse direct solve of (rho + degree_i) v_i - sum_{j free} W_ij v_j = sum_{j in src} W_ij."""
    _check_source(graph, source)
    cap = direct_max_n()
    if graph.n > cap:
        raise SizeLimitError(
            f"direct oracle is limited to n <= {cap} (got n={graph.n}); use the iterative solver"
        )
    values = np.zeros(graph.n)
    if _ground_is_degenerate(graph, source):
        values[:] = 1.0
        return VoltageFunction(values, source)
    is_src = source.indicator(graph.n)
    free = np.flatnonzero(~is_src)
    if free.size:
        W_ff, src_sum, denom = _free_system(graph, free, is_src)
        system = (sp.diags(denom) - W_ff).tocsc()
        values[free] = np.clip(np.atleast_1d(spsolve(system, src_sum)), 0.0, 1.0)
    values[source.mask] = 1.0
    return VoltageFunction(values, source)


def solve_localized(
    graph: GroundedGraph, source: SourceRegion, cfg: SolverConfig
) -> Tuple[VoltageFunction, SolveReport]:
    """Iterate on an active set grown by frontier expansion from the source.

    Inactive nodes count as 0.  A node's neighbors join the active set once
    its value reaches ``tau``; the loop stops when no new node joins.
    """
    cfg.validate()
    if cfg.tau is None or not (0.0 < cfg.tau < 1.0):
        raise ValidationError(f"localized solve needs 0 < tau < 1 (got {cfg.tau})", field="tau")
    _check_source(graph, source)
    t0 = time.perf_counter()
    n = graph.n
    tau = float(cfg.tau)
    values = np.zeros(n)
    if _ground_is_degenerate(graph, source):
        values[:] = 1.0
        report = SolveReport(mode="localized", wall_time=time.perf_counter() - t0, contraction_bound=1.0)
        return VoltageFunction(values, source, np.arange(n, dtype=np.int64)), report

    is_src = source.indicator(n)
    values[source.mask] = 1.0
    active = is_src.copy()
    total_iters, ratio_max, res, ok, rounds = 0, 0.0, 0.0, True, 0
    act_free = np.empty(0, dtype=np.int64)
    adj = graph.adjacency
    while True:
        hot = np.flatnonzero(active & (values >= tau))
        reach = np.unique(adj[hot].indices)
        new = reach[~active[reach]]
        if new.size == 0:
            break
        active[new] = True
        rounds += 1
        act_free = np.flatnonzero(active & ~is_src)
        W_aa, src_sum, denom = _free_system(graph, act_free, is_src)
        u, iters, res, ratio, conv = _power_iterate(
            W_aa, denom, src_sum / denom, cfg.tol, int(cfg.max_iters), u0=values[act_free]
        )
        values[act_free] = np.clip(u, 0.0, 1.0)
        total_iters += iters
        ratio_max = max(ratio_max, ratio)
        ok = ok and conv

    support = np.flatnonzero(values >= tau).astype(np.int64)
    report = SolveReport(
        iterations=total_iters,
        final_residual=res,
        contraction_ratio_observed=ratio_max,
        wall_time=time.perf_counter() - t0,
        converged=ok,
        contraction_bound=_contraction_bound(graph, act_free),
        mode="localized",
    )
    logger.info(
        "localized solve: active=%d support=%d rounds=%d iterations=%d",
        int(active.sum()), support.size, rounds, total_iters,
    )
    return VoltageFunction(values, source, support), report


def solve(
    graph: GroundedGraph, source: SourceRegion, cfg: Optional[SolverConfig] = None
) -> Tuple[VoltageFunction, SolveReport]:
    """Dispatch on ``cfg.mode``."""
    cfg = (cfg or SolverConfig()).validate()
    if cfg.mode == "localized":
        return solve_localized(graph, source, cfg)
    if cfg.mode == "direct_oracle":
        t0 = time.perf_counter()
        v = solve_direct_oracle(graph, source)
        res = fixed_point_residual(graph, source, v.values)
        free = np.setdiff1d(np.arange(graph.n), source.mask, assume_unique=True)
        return v, SolveReport(
            final_residual=res,
            wall_time=time.perf_counter() - t0,
            contraction_bound=_contraction_bound(graph, free),
            mode="direct_oracle",
        )
    return solve_grounded_emv(graph, source, cfg)


# -------------------------
# Extension to off-sample points
# -------------------------
def extend_voltage(
    graph: GroundedGraph,
    v: VoltageFunction,
    queries: np.ndarray,
    strict: bool = True,
    pin_source: bool = True,
) -> np.ndarray:
    """Kernel-weighted average of sampled voltages; 1 inside the source ball.

    With ``pin_source`` off the raw average is returned everywhere, unclipped,
    which suits signed potentials such as the ER baselines.

    A sample sitting exactly at the query is skipped, matching the graph's
    no-self-loop rule.  Queries with no kernel mass raise
    ``UndefinedExtensionError`` (or come back NaN when ``strict`` is False).
    """
    if graph.points is None or graph.kernel is None:
        raise ValidationError("extension needs a graph built from a point cloud", field="graph")
    pts = graph.points.points
    q = np.asarray(queries, dtype=float)
    if q.ndim == 1:
        q = q.reshape(-1, pts.shape[1]) if pts.shape[1] > 1 else q.reshape(-1, 1)
    if q.shape[1] != pts.shape[1]:
        raise ValidationError(f"query dimension {q.shape[1]} != cloud dimension {pts.shape[1]}", field="queries")

    kernel = graph.kernel
    m = q.shape[0]
    num = np.zeros(m)
    den = np.zeros(m)
    if math.isfinite(kernel.support_radius):
        qi, pj, dist = radius_query(pts, q, kernel.support_radius)
        keep = dist > 0.0
        w = np.asarray(kernel.from_distance(dist[keep]), dtype=float)
        np.add.at(num, qi[keep], w * v.values[pj[keep]])
        np.add.at(den, qi[keep], w)
    else:
        K = kernel_matrix(kernel, q, pts)
        K[cdist(q, pts) == 0.0] = 0.0
        num = K @ v.values
        den = K.sum(axis=1)

    out = np.full(m, np.nan)
    ok = den > 0.0
    out[ok] = num[ok] / den[ok]
    if pin_source:
        np.clip(out, 0.0, 1.0, out=out)
        out[v.source.contains(q)] = 1.0
    undefined = np.flatnonzero(np.isnan(out))
    if undefined.size and strict:
        raise UndefinedExtensionError(
            f"undefined extension at {undefined.size} query point(s): no kernel mass outside the source",
            undefined,
        )
    return out
