"""
Benchmark manifolds, kernels and metric helpers
-----------------------------------------------
Uniform i.i.d. samples from the manifolds used by the experiments
(interval, unit square, disk, sphere, sphere segment), kernel similarity
functions, and the chord/angle/geodesic conversions on the unit sphere.

All sampling is driven by a per-call ``numpy.random.default_rng(seed)`` so
identical (spec, n, seed) triples give bit-identical clouds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import betainc, gamma

from .config import ValidationError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
MEMBERSHIP_TOL = 1e-12
UNIT_TOL = 1e-9

MANIFOLD_KINDS = ("interval", "unit_square", "sphere", "sphere_segment", "disk", "external")
KERNEL_KINDS = ("radial", "gaussian")

ArrayLike = Union[np.ndarray, float]


# -------------------------
# Geometry helpers
# -------------------------
def unit_ball_volume(d: int) -> float:
    """Lebesgue volume of the unit ball in R^d."""
    return float(math.pi ** (d / 2.0) / gamma(d / 2.0 + 1.0))


def unit_volume_radius(d: int) -> float:
    """Radius of the d-ball with volume 1."""
    return float(unit_ball_volume(d) ** (-1.0 / d))


def spherical_cap_fraction(theta: float, d: int) -> float:
    """Fraction of S^{d-1} within geodesic angle ``theta`` of a point."""
    if theta <= 0.0:
        return 0.0
    if theta >= math.pi:
        return 1.0
    half = 0.5 * float(betainc((d - 1) / 2.0, 0.5, math.sin(theta) ** 2))
    return half if theta <= math.pi / 2.0 else 1.0 - half


# -------------------------
# Manifold spec
# -------------------------
@dataclass(frozen=True)
class ManifoldSpec:
    """Which manifold to sample; ``kind`` selects which fields matter.

    interval uses ``lo``/``hi``; sphere and sphere_segment use ``dim`` (ambient
    dimension) and the segment also ``azimuth``; disk uses ``dim`` and
    ``radius`` (None means the unit-volume radius).
    """

    kind: str
    lo: float = 0.0
    hi: float = 1.0
    dim: int = 1
    azimuth: Tuple[float, float] = (0.0, math.pi)
    radius: Optional[float] = None

    # constructors
    @classmethod
    def interval(cls, lo: float, hi: float) -> "ManifoldSpec":
        return cls(kind="interval", lo=float(lo), hi=float(hi), dim=1).validate()

    @classmethod
    def unit_square(cls) -> "ManifoldSpec":
        return cls(kind="unit_square", lo=0.0, hi=1.0, dim=2).validate()

    @classmethod
    def sphere(cls, dim: int) -> "ManifoldSpec":
        return cls(kind="sphere", dim=int(dim)).validate()

    @classmethod
    def sphere_segment(
        cls, dim: int, azimuth: Tuple[float, float] = (0.0, math.pi)
    ) -> "ManifoldSpec":
        az = (float(azimuth[0]), float(azimuth[1]))
        return cls(kind="sphere_segment", dim=int(dim), azimuth=az).validate()

    @classmethod
    def disk(cls, dim: int = 2, radius: Optional[float] = None) -> "ManifoldSpec":
        return cls(kind="disk", dim=int(dim), radius=radius).validate()

    @classmethod
    def external(cls, dim: int) -> "ManifoldSpec":
        return cls(kind="external", dim=int(dim)).validate()

    def validate(self) -> "ManifoldSpec":
        if self.kind not in MANIFOLD_KINDS:
            raise ValidationError(
                f"unknown manifold kind {self.kind!r}; choose from {', '.join(MANIFOLD_KINDS)}",
                field="kind",
            )
        if self.kind == "interval":
            if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
                raise ValidationError("interval bounds must be finite", field="lo")
            if self.lo >= self.hi:
                raise ValidationError(
                    f"interval requires lo < hi (got lo={self.lo}, hi={self.hi})", field="lo"
                )
        if self.kind in ("sphere", "sphere_segment") and self.dim < 2:
            raise ValidationError(f"sphere requires dim >= 2 (got {self.dim})", field="dim")
        if self.kind == "sphere_segment":
            a0, a1 = self.azimuth
            if not (0.0 <= a0 < a1 <= TWO_PI):
                raise ValidationError(
                    f"azimuth range must be a sub-interval of [0, 2pi) (got {self.azimuth})",
                    field="azimuth",
                )
        if self.kind == "disk":
            if self.dim < 1:
                raise ValidationError(f"disk requires dim >= 1 (got {self.dim})", field="dim")
            if self.radius is not None and not self.radius > 0.0:
                raise ValidationError(f"disk radius must be > 0 (got {self.radius})", field="radius")
        if self.kind == "external" and self.dim < 1:
            raise ValidationError(f"external data requires dim >= 1 (got {self.dim})", field="dim")
        return self

    @property
    def ambient_dim(self) -> int:
        if self.kind == "interval":
            return 1
        if self.kind == "unit_square":
            return 2
        return self.dim

    @property
    def disk_radius(self) -> float:
        return self.radius if self.radius is not None else unit_volume_radius(self.dim)

    @property
    def is_spherical(self) -> bool:
        return self.kind in ("sphere", "sphere_segment")

    def contains(self, points: np.ndarray, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        """Row-wise membership predicate."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "interval":
            x = pts[:, 0]
            return (x >= self.lo - tol) & (x <= self.hi + tol)
        if self.kind == "unit_square":
            return np.all((pts >= -tol) & (pts <= 1.0 + tol), axis=1)
        if self.kind == "disk":
            return np.linalg.norm(pts, axis=1) <= self.disk_radius + tol
        if self.kind in ("sphere", "sphere_segment"):
            ok = np.abs(np.linalg.norm(pts, axis=1) - 1.0) <= tol
            if self.kind == "sphere_segment":
                az = azimuth_of(pts)
                ok &= (az >= self.azimuth[0] - tol) & (az <= self.azimuth[1] + tol)
            return ok
        return np.isfinite(pts).all(axis=1)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind}
        if self.kind == "interval":
            out.update(lo=self.lo, hi=self.hi)
        elif self.kind in ("sphere", "external"):
            out.update(dim=self.dim)
        elif self.kind == "sphere_segment":
            out.update(dim=self.dim, azimuth=list(self.azimuth))
        elif self.kind == "disk":
            out.update(dim=self.dim, radius=self.radius)
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ManifoldSpec":
        kind = data.get("kind")
        if kind == "interval":
            return cls.interval(data.get("lo", 0.0), data.get("hi", 1.0))
        if kind == "unit_square":
            return cls.unit_square()
        if kind == "sphere":
            return cls.sphere(data.get("dim", 3))
        if kind == "sphere_segment":
            return cls.sphere_segment(data.get("dim", 3), tuple(data.get("azimuth", (0.0, math.pi))))
        if kind == "disk":
            return cls.disk(data.get("dim", 2), data.get("radius"))
        if kind == "external":
            return cls.external(data.get("dim", 1))
        raise ValidationError(f"unknown manifold kind {kind!r}", field="kind")


# -------------------------
# Kernel spec
# -------------------------
@dataclass(frozen=True)
class KernelSpec:
    """Radial (indicator of the r-ball) or Gaussian kernel.

    ``bandwidth`` is r for the radial kernel and sigma for the Gaussian one.
    ``cutoff`` (Gaussian only) drops pairs farther than cutoff * sigma when
    building graphs; None keeps every pair.
    """

    kind: str
    bandwidth: float
    cutoff: Optional[float] = 3.0

    @classmethod
    def radial(cls, r: float) -> "KernelSpec":
        return cls(kind="radial", bandwidth=float(r), cutoff=None).validate()

    @classmethod
    def gaussian(cls, sigma: float, cutoff: Optional[float] = 3.0) -> "KernelSpec":
        return cls(kind="gaussian", bandwidth=float(sigma), cutoff=cutoff).validate()

    def validate(self) -> "KernelSpec":
        if self.kind not in KERNEL_KINDS:
            raise ValidationError(
                f"unknown kernel kind {self.kind!r}; choose from {', '.join(KERNEL_KINDS)}",
                field="kind",
            )
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0.0):
            raise ValidationError(
                f"kernel bandwidth must be > 0 (got {self.bandwidth})", field="bandwidth"
            )
        if self.kind == "gaussian" and self.cutoff is not None and not self.cutoff > 0.0:
            raise ValidationError(f"cutoff must be > 0 or None (got {self.cutoff})", field="cutoff")
        return self

    @property
    def support_radius(self) -> float:
        """Distance beyond which graph construction stores no weight."""
        if self.kind == "radial":
            return self.bandwidth
        if self.cutoff is None:
            return math.inf
        return self.cutoff * self.bandwidth

    def from_distance(self, dist: ArrayLike) -> ArrayLike:
        """Kernel value as a function of ambient distance."""
        d = np.asarray(dist, dtype=float)
        if self.kind == "radial":
            out = (d <= self.bandwidth).astype(float)
        else:
            out = np.exp(-(d * d) / (2.0 * self.bandwidth * self.bandwidth))
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind, "bandwidth": self.bandwidth}
        if self.kind == "gaussian":
            out["cutoff"] = self.cutoff
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KernelSpec":
        kind = data.get("kind")
        if kind == "radial":
            return cls.radial(data["bandwidth"])
        if kind == "gaussian":
            return cls.gaussian(data["bandwidth"], data.get("cutoff", 3.0))
        raise ValidationError(f"unknown kernel kind {kind!r}", field="kind")


# -------------------------
# Point cloud
# -------------------------
@dataclass(frozen=True, eq=False)
class PointCloud:
    """n x d sample; row order is the node order used everywhere downstream."""

    points: np.ndarray
    manifold: ManifoldSpec
    seed: int = 0
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        pts = np.ascontiguousarray(pts)
        object.__setattr__(self, "points", pts)
        if pts.shape[0] < 1:
            raise ValidationError("a point cloud needs at least one point", field="n")

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def d(self) -> int:
        return int(self.points.shape[1])

    def check_membership(self, tol: float = MEMBERSHIP_TOL) -> None:
        bad = np.flatnonzero(~self.manifold.contains(self.points, tol))
        if bad.size:
            raise ValidationError(
                f"{bad.size} point(s) off the {self.manifold.kind} manifold (first row {bad[0]})",
                field="points",
            )

    def subset(self, indices: np.ndarray) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(self.points[idx], self.manifold, self.seed, dict(self.meta, subset=True))


# -------------------------
# Sampling
# -------------------------
def azimuth_of(points: np.ndarray) -> np.ndarray:
    """Azimuth atan2(x_2, x_1) mapped to [0, 2pi)."""
    pts = np.atleast_2d(points)
    return np.mod(np.arctan2(pts[:, 1], pts[:, 0]), TWO_PI)


def _unit_gaussians(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_manifold(spec: ManifoldSpec, n: int, seed: int) -> PointCloud:
    """Draw ``n`` i.i.d. points uniformly on ``spec``."""
    spec.validate()
    if int(n) < 1:
        raise ValidationError(f"n must be >= 1 (got {n})", field="n")
    if int(seed) < 0:
        raise ValidationError(f"seed must be unsigned (got {seed})", field="seed")
    n = int(n)
    rng = np.random.default_rng(int(seed))

    if spec.kind == "interval":
        pts = spec.lo + (spec.hi - spec.lo) * rng.random((n, 1))
        np.clip(pts, spec.lo, spec.hi, out=pts)
    elif spec.kind == "unit_square":
        pts = rng.random((n, 2))
    elif spec.kind == "sphere":
        pts = _unit_gaussians(rng, n, spec.dim)
    elif spec.kind == "sphere_segment":
        pts = _sample_segment(rng, spec, n)
    elif spec.kind == "disk":
        directions = _unit_gaussians(rng, n, spec.dim)
        radii = spec.disk_radius * rng.random(n) ** (1.0 / spec.dim)
        pts = directions * radii[:, None]
    else:
        raise ValidationError("external manifolds cannot be sampled; load a CSV instead", field="kind")

    logger.debug("sampled %d points on %s (seed=%d)", n, spec.kind, seed)
    return PointCloud(pts, spec, int(seed))


def _sample_segment(rng: np.random.Generator, spec: ManifoldSpec, n: int) -> np.ndarray:
    a0, a1 = spec.azimuth
    frac = (a1 - a0) / TWO_PI
    kept = []
    have = 0
    while have < n:
        batch = max(64, int(math.ceil(1.2 * (n - have) / frac)))
        cand = _unit_gaussians(rng, batch, spec.dim)
        az = azimuth_of(cand)
        cand = cand[(az >= a0) & (az <= a1)]
        kept.append(cand)
        have += cand.shape[0]
    return np.concatenate(kept, axis=0)[:n]


# -------------------------
# Kernels and metrics
# -------------------------
def eval_kernel(k: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """k(x, y) on the Euclidean ambient distance."""
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    yv = np.atleast_1d(np.asarray(y, dtype=float))
    if xv.shape != yv.shape:
        raise ValidationError(
            f"dimension mismatch: {xv.shape[0]} vs {yv.shape[0]}", field="y"
        )
    return float(k.from_distance(float(np.linalg.norm(xv - yv))))


def kernel_matrix(k: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Dense kernel block between rows of X and rows of Y."""
    Xa = np.atleast_2d(np.asarray(X, dtype=float))
    Ya = np.atleast_2d(np.asarray(Y, dtype=float))
    if Xa.shape[1] != Ya.shape[1]:
        raise ValidationError(f"dimension mismatch: {Xa.shape[1]} vs {Ya.shape[1]}", field="Y")
    return np.asarray(k.from_distance(cdist(Xa, Ya)))


def chord_to_angle(r: ArrayLike) -> ArrayLike:
    """Angle subtending a chord of length r on the unit circle: 2 arcsin(r/2)."""
    rv = np.asarray(r, dtype=float)
    if np.any(~(rv > 0.0)) or np.any(rv > 2.0):
        raise ValidationError(f"chord length must lie in (0, 2] (got {r})", field="r")
    out = 2.0 * np.arcsin(rv / 2.0)
    return float(out) if out.ndim == 0 else out


def angle_to_chord(theta: ArrayLike) -> ArrayLike:
    """Chord length 2 sin(theta/2) for theta in (0, pi]."""
    tv = np.asarray(theta, dtype=float)
    if np.any(~(tv > 0.0)) or np.any(tv > math.pi):
        raise ValidationError(f"angle must lie in (0, pi] (got {theta})", field="theta")
    out = 2.0 * np.sin(tv / 2.0)
    return float(out) if out.ndim == 0 else out


def geodesic_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Great-circle distance between two unit vectors."""
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if xv.shape != yv.shape:
        raise ValidationError(f"dimension mismatch: {xv.shape} vs {yv.shape}", field="y")
    for name, v in (("x", xv), ("y", yv)):
        if abs(float(np.linalg.norm(v)) - 1.0) > UNIT_TOL:
            raise ValidationError(f"{name} is not a unit vector (norm={np.linalg.norm(v)})", field=name)
    return float(np.arccos(np.clip(float(np.dot(xv, yv)), -1.0, 1.0)))


def geodesic_distances(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Vectorized great-circle distances from ``center`` to each row."""
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    return np.arccos(np.clip(np.asarray(points, dtype=float) @ c, -1.0, 1.0))


def kernel_ball_mass(spec: ManifoldSpec, r: float) -> float:
    """mu-mass of a radial-kernel ball of radius r around an interior point.

    This is the limit of a node's degree under the k/n weight convention.
    """
    if spec.kind == "interval":
        return min(1.0, 2.0 * r / (spec.hi - spec.lo))
    if spec.kind == "unit_square":
        return min(1.0, math.pi * r * r)
    if spec.kind == "disk":
        return min(1.0, (r / spec.disk_radius) ** spec.dim)
    if spec.kind in ("sphere", "sphere_segment"):
        theta = math.pi if r >= 2.0 else float(chord_to_angle(r))
        cap = spherical_cap_fraction(theta, spec.dim)
        if spec.kind == "sphere_segment":
            cap = min(1.0, cap / ((spec.azimuth[1] - spec.azimuth[0]) / TWO_PI))
        return cap
    raise ValidationError("kernel-ball mass is unknown for external data", field="kind")
