"""
Landmark voltage embeddings
---------------------------
One grounded voltage per landmark gives an n x m matrix Z; MDS on the
centred Z gives d-dimensional coordinates, and orthogonal Procrustes lines
those coordinates up with a reference for plotting.

Quality sweeps score the log voltages -log v, which grow roughly linearly
with distance from each landmark, by the best affine fit to the sample
positions. Landmark sets are nested across m, so the score cannot get worse
as landmarks are added.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import lstsq, orthogonal_procrustes

from .config import GroundedVoltageError, ValidationError, max_workers
from .graph_construction import GroundedGraph, SourceRegion, build_grounded_graph, select_source
from .manifold_sampling import KernelSpec, ManifoldSpec, PointCloud, geodesic_distance, sample_manifold
from .voltage_solver import SolveReport, SolverConfig, solve

logger = logging.getLogger(__name__)

LANDMARK_STRATEGIES = ("uniform_random", "farthest_point", "explicit")
DEFAULT_PAIR_COUNT = 100_000
DEFAULT_ETA = 1e-12
# voltages below this are clipped before taking logs
VOLTAGE_FLOOR = 1e-12
QUALITY_TOL = 1e-12


# -------------------------
# Types
# -------------------------
@dataclass(frozen=True, eq=False)
class LandmarkSet:
    indices: np.ndarray
    centers: np.ndarray
    radius_s: Optional[float] = None
    strategy: str = "uniform_random"
    seed: Optional[int] = None

    @property
    def m(self) -> int:
        return int(self.indices.size)

    def resolve_radius(self, kernel: Optional[KernelSpec]) -> float:
        """Shared source radius; the kernel bandwidth when unset."""
        if self.radius_s is not None:
            return float(self.radius_s)
        if kernel is None:
            raise ValidationError("landmark radius unset and no kernel to default from", field="radius_s")
        return float(kernel.bandwidth)

    def sources(self, cloud: PointCloud, radius_s: float) -> List[SourceRegion]:
        return [select_source(cloud, c, radius_s) for c in self.centers]

    def permuted(self, order: Sequence[int]) -> "LandmarkSet":
        order = np.asarray(order, dtype=np.int64)
        return LandmarkSet(self.indices[order], self.centers[order], self.radius_s, self.strategy, self.seed)

    @classmethod
    def from_centers(
        cls, cloud: PointCloud, centers: np.ndarray, radius_s: Optional[float] = None
    ) -> "LandmarkSet":
        """Landmarks at explicit positions; ``indices`` are the nearest samples."""
        c = np.atleast_2d(np.asarray(centers, dtype=float))
        if c.shape[1] != cloud.d:
            raise ValidationError(f"centers have dimension {c.shape[1]}, cloud has {cloud.d}", field="centers")
        nearest = np.array(
            [int(np.argmin(np.linalg.norm(cloud.points - x, axis=1))) for x in c], dtype=np.int64
        )
        return cls(indices=nearest, centers=c, radius_s=radius_s, strategy="explicit")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "indices": self.indices.tolist(),
            "centers": self.centers.tolist(),
            "radius_s": self.radius_s,
            "strategy": self.strategy,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LandmarkSet":
        return cls(
            indices=np.asarray(data["indices"], dtype=np.int64),
            centers=np.atleast_2d(np.asarray(data["centers"], dtype=float)),
            radius_s=data.get("radius_s"),
            strategy=data.get("strategy", "explicit"),
            seed=data.get("seed"),
        )


@dataclass(frozen=True, eq=False)
class Embedding:
    """Z[:, i] is the voltage of landmark i."""

    Z: np.ndarray
    landmarks: LandmarkSet
    reports: List[SolveReport] = field(default_factory=list)

    def head(self, m: int) -> "Embedding":
        """The embedding given by the first m landmarks."""
        if not (1 <= m <= self.landmarks.m):
            raise ValidationError(f"head needs 1 <= m <= {self.landmarks.m} (got {m})", field="m")
        lm = self.landmarks
        sub = LandmarkSet(lm.indices[:m], lm.centers[:m], lm.radius_s, lm.strategy, lm.seed)
        return Embedding(Z=self.Z[:, :m], landmarks=sub, reports=self.reports[:m])


@dataclass(frozen=True, eq=False)
class Projection:
    coords: np.ndarray
    singular_values: np.ndarray
    # rows are right singular vectors; coords @ components reproduces the centred Z at full rank
    components: np.ndarray


@dataclass
class InjectivityReport:
    violations: List[Tuple[int, int]]
    min_margin: float
    pairs_tested: int
    far_pairs: int
    epsilon: float
    eta: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            "violations": [list(p) for p in self.violations[:100]],
            "violation_count": len(self.violations),
            "min_margin": self.min_margin,
            "pairs_tested": self.pairs_tested,
            "far_pairs": self.far_pairs,
            "epsilon": self.epsilon,
            "eta": self.eta,
        }


# -------------------------
# Landmarks
# -------------------------
def select_landmarks(
    cloud: PointCloud,
    m: int,
    strategy: str = "uniform_random",
    seed: int = 0,
    radius_s: Optional[float] = None,
) -> LandmarkSet:
    n = cloud.n
    if not (1 <= m <= n):
        raise ValidationError(f"landmark count must satisfy 1 <= m <= n={n} (got {m})", field="m")
    rng = np.random.default_rng(seed)
    if strategy == "uniform_random":
        idx = rng.choice(n, size=m, replace=False).astype(np.int64)
    elif strategy == "farthest_point":
        pts = cloud.points
        idx = np.empty(m, dtype=np.int64)
        idx[0] = int(rng.integers(n))
        nearest = np.linalg.norm(pts - pts[idx[0]], axis=1)
        for k in range(1, m):
            idx[k] = int(np.argmax(nearest))
            nearest = np.minimum(nearest, np.linalg.norm(pts - pts[idx[k]], axis=1))
    else:
        raise ValidationError(
            f"unknown landmark strategy {strategy!r}; choose uniform_random or farthest_point",
            field="strategy",
        )
    return LandmarkSet(
        indices=idx, centers=cloud.points[idx].copy(), radius_s=radius_s, strategy=strategy, seed=seed
    )


# -------------------------
# Embedding
# -------------------------
def voltage_embedding(
    graph: GroundedGraph,
    landmarks: LandmarkSet,
    cfg: Optional[SolverConfig] = None,
    workers: Optional[int] = None,
) -> Embedding:
    """Independent grounded solve per landmark, stacked column-wise in landmark order."""
    if graph.points is None:
        raise ValidationError("embedding needs a graph built from a point cloud", field="graph")
    cfg = (cfg or SolverConfig()).validate()
    radius = landmarks.resolve_radius(graph.kernel)
    cloud = graph.points

    def _column(i: int) -> Tuple[np.ndarray, SolveReport]:
        try:
            source = select_source(cloud, landmarks.centers[i], radius)
            v, report = solve(graph, source, cfg)
        except GroundedVoltageError as exc:
            exc.args = (f"landmark {i}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
            raise
        return v.values, report

    n_workers = workers if workers is not None else max_workers()
    n_workers = max(1, min(int(n_workers), landmarks.m))
    if n_workers == 1:
        results = [_column(i) for i in range(landmarks.m)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_column, range(landmarks.m)))

    Z = np.column_stack([r[0] for r in results]) if results else np.zeros((graph.n, 0))
    logger.info("voltage embedding: n=%d m=%d workers=%d", graph.n, landmarks.m, n_workers)
    return Embedding(Z=Z, landmarks=landmarks, reports=[r[1] for r in results])


def mds_project(emb: Embedding | np.ndarray, d: int) -> Projection:
    """Leading d left singular vectors of the column-centred Z, scaled by singular values.

    Each left vector is signed so its largest-magnitude entry is positive.
    """
    Z = emb.Z if isinstance(emb, Embedding) else np.asarray(emb, dtype=float)
    m = Z.shape[1]
    if not (1 <= d <= m):
        raise ValidationError(f"target dimension must satisfy 1 <= d <= m={m} (got {d})", field="d")
    Zs = Z - Z.mean(axis=0)
    U, s, Vt = np.linalg.svd(Zs, full_matrices=False)
    U, s, Vt = U[:, :d], s[:d], Vt[:d]
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(d)])
    signs[signs == 0] = 1.0
    U = U * signs
    Vt = Vt * signs[:, None]
    return Projection(coords=U * s, singular_values=s, components=Vt)


def procrustes_rotation(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, float]:
    """Orthogonal Q minimizing ||Xc Q - Yc||_F for the centred inputs, plus the trace term."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape:
        raise ValidationError(f"shape mismatch: {X.shape} vs {Y.shape}", field="X")
    return orthogonal_procrustes(X - X.mean(axis=0), Y - Y.mean(axis=0))


def procrustes_align(X: np.ndarray, Y: np.ndarray, scale: bool = False) -> Tuple[np.ndarray, float]:
    """Align X onto reference Y; error is ||XQ - Y||_F / ||Y||_F after centring.

    With ``scale`` the aligned coordinates are also multiplied by the optimal
    isotropic factor.
    """
    Q, trace = procrustes_rotation(X, Y)
    Xc = np.asarray(X, dtype=float) - np.mean(X, axis=0)
    Yc = np.asarray(Y, dtype=float) - np.mean(Y, axis=0)
    aligned = Xc @ Q
    if scale:
        xx = float(np.sum(Xc * Xc))
        if xx > 0.0:
            aligned = aligned * (trace / xx)
    y_norm = float(np.linalg.norm(Yc))
    resid = float(np.linalg.norm(aligned - Yc))
    return aligned, (resid / y_norm if y_norm > 0.0 else resid)


def affine_align(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, float]:
    """Least-squares affine map of X onto Y; error is ||[1 X]B - Y||_F / ||Y - mean(Y)||_F.

    Adding columns to X never increases the error.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValidationError(f"row mismatch: {X.shape} vs {Y.shape}", field="X")
    A = np.column_stack([np.ones(X.shape[0]), X])
    B, _, _, _ = lstsq(A, Y)
    aligned = A @ B
    y_norm = float(np.linalg.norm(Y - Y.mean(axis=0)))
    resid = float(np.linalg.norm(aligned - Y))
    return aligned, (resid / y_norm if y_norm > 0.0 else resid)


def log_voltage(Z: np.ndarray, floor: float = VOLTAGE_FLOOR) -> np.ndarray:
    """-log of the voltages clipped to [floor, 1]; 0 on the sources."""
    if not 0.0 < floor < 1.0:
        raise ValidationError(f"floor must be in (0, 1) (got {floor})", field="floor")
    return -np.log(np.clip(np.asarray(Z, dtype=float), floor, 1.0))


def check_injectivity(
    emb: Embedding,
    cloud: PointCloud,
    epsilon: float,
    eta: float = DEFAULT_ETA,
    n_pairs: int = DEFAULT_PAIR_COUNT,
    seed: int = 0,
    metric: str = "euclidean",
) -> InjectivityReport:
    """Sampled check of: ambient distance > epsilon implies embedding distance > eta."""
    if not epsilon > 0.0:
        raise ValidationError(f"epsilon must be > 0 (got {epsilon})", field="epsilon")
    if not eta >= 0.0:
        raise ValidationError(f"eta must be >= 0 (got {eta})", field="eta")
    if metric not in ("euclidean", "geodesic"):
        raise ValidationError(f"unknown metric {metric!r}", field="metric")
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, cloud.n, size=(int(n_pairs), 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    a, b = pairs[:, 0], pairs[:, 1]
    P = cloud.points
    if metric == "geodesic":
        ambient = np.array([geodesic_distance(P[i], P[j]) for i, j in zip(a, b)])
    else:
        ambient = np.linalg.norm(P[a] - P[b], axis=1)
    far = ambient > epsilon
    gap = np.linalg.norm(emb.Z[a[far]] - emb.Z[b[far]], axis=1)
    bad = gap <= eta
    violations = [(int(i), int(j)) for i, j in zip(a[far][bad], b[far][bad])]
    min_margin = float(gap.min()) if gap.size else math.inf
    if violations:
        logger.warning("injectivity: %d violation(s) among %d far pairs", len(violations), int(far.sum()))
    return InjectivityReport(
        violations=violations,
        min_margin=min_margin,
        pairs_tested=int(pairs.shape[0]),
        far_pairs=int(far.sum()),
        epsilon=float(epsilon),
        eta=float(eta),
    )


# -------------------------
# Quality sweep
# -------------------------
@dataclass
class QualityStudy:
    m_values: List[int]
    seeds: List[int]
    # errors[s][k]: seed index s, landmark count m_values[k]; affine fit of the log voltages
    errors: np.ndarray
    # same layout; scaled orthogonal Procrustes of the d-dimensional MDS coordinates
    mds_errors: Optional[np.ndarray] = None

    @property
    def median_error(self) -> np.ndarray:
        return np.median(self.errors, axis=0)

    @property
    def median_mds_error(self) -> Optional[np.ndarray]:
        return None if self.mds_errors is None else np.median(self.mds_errors, axis=0)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "m_values": self.m_values,
            "seeds": self.seeds,
            "errors": self.errors.tolist(),
            "median_error": self.median_error.tolist(),
        }
        if self.mds_errors is not None:
            out["mds_errors"] = self.mds_errors.tolist()
            out["median_mds_error"] = self.median_mds_error.tolist()
        return out


def score_embedding(emb: Embedding, reference: np.ndarray, d: int) -> Tuple[float, float]:
    """(affine error of -log Z, scaled Procrustes error of its d-dimensional MDS) against ``reference``."""
    feats = log_voltage(emb.Z)
    _, err = affine_align(feats, reference)
    dim = reference.shape[1]
    X = mds_project(feats, min(d, emb.landmarks.m, dim)).coords
    if X.shape[1] < dim:
        X = np.pad(X, ((0, 0), (0, dim - X.shape[1])))
    _, mds_err = procrustes_align(X, reference, scale=True)
    return err, mds_err


def embedding_quality_study(
    manifold: ManifoldSpec,
    n: int,
    kernel: KernelSpec,
    rho_g: float,
    m_values: Sequence[int],
    seeds: Sequence[int],
    d: Optional[int] = None,
    strategy: str = "uniform_random",
    cfg: Optional[SolverConfig] = None,
) -> QualityStudy:
    """Embedding error against the sample positions for each m and seed.

    Per seed one landmark sequence of length max(m_values) is drawn and each
    m uses its first m landmarks.
    """
    if not m_values or not seeds:
        raise ValidationError("quality study needs at least one m and one seed", field="m_values")
    d = int(d or manifold.ambient_dim)
    cfg = cfg or SolverConfig(tol=QUALITY_TOL)
    m_max = max(int(m) for m in m_values)
    errors = np.zeros((len(seeds), len(m_values)))
    mds_errors = np.zeros_like(errors)
    for s_idx, seed in enumerate(seeds):
        cloud = sample_manifold(manifold, n, seed)
        graph = build_grounded_graph(cloud, kernel, rho_g)
        full = voltage_embedding(graph, select_landmarks(cloud, m_max, strategy, seed), cfg)
        for k_idx, m in enumerate(m_values):
            err, mds_err = score_embedding(full.head(int(m)), cloud.points, d)
            errors[s_idx, k_idx] = err
            mds_errors[s_idx, k_idx] = mds_err
            logger.info("quality: seed=%d m=%d error=%.4f mds_error=%.4f", seed, m, err, mds_err)
    return QualityStudy(
        m_values=[int(m) for m in m_values],
        seeds=[int(s) for s in seeds],
        errors=errors,
        mds_errors=mds_errors,
    )
