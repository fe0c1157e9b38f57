"""
Analysis of grounded voltages
-----------------------------
Radial profiles around the source, monotonicity and decay-envelope checks,
support-radius estimates against their theoretical bounds, and convergence
of the extended voltage as the sample grows.

Envelopes are anchored at the edge of the unit plateau: z1 is the source
radius (angular on spheres), where the profile first leaves 1.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import UndefinedExtensionError, ValidationError, max_workers
from .graph_construction import build_grounded_graph, select_source
from .manifold_sampling import (
    KernelSpec,
    ManifoldSpec,
    PointCloud,
    chord_to_angle,
    geodesic_distances,
    kernel_ball_mass,
    sample_manifold,
)
from .voltage_solver import SolverConfig, VoltageFunction, extend_voltage, solve

logger = logging.getLogger(__name__)

GAMMA_SAMPLES = 1_000_000


# -------------------------
# Radial profiles
# -------------------------
@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Binned voltage against distance from the source centre.

    Empty bins carry count 0 and NaN mean/stddev.
    """

    bin_edges: np.ndarray
    bin_mean: np.ndarray
    bin_count: np.ndarray
    bin_stddev: np.ndarray
    source_radius: float = 0.0
    metric: str = "euclidean"

    @property
    def n_bins(self) -> int:
        return int(self.bin_count.size)

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def defined(self) -> np.ndarray:
        return self.bin_count > 0

    @property
    def stderr(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.defined, self.bin_stddev / np.sqrt(self.bin_count), np.nan)

    def to_rows(self) -> List[Tuple[float, float, float, int, float]]:
        return [
            (float(lo), float(hi), float(m), int(c), float(s))
            for lo, hi, m, c, s in zip(
                self.bin_edges[:-1], self.bin_edges[1:], self.bin_mean, self.bin_count, self.bin_stddev
            )
        ]


def _distances(cloud: PointCloud, center: np.ndarray) -> Tuple[np.ndarray, str]:
    c = np.asarray(center, dtype=float).ravel()
    if c.size != cloud.d:
        raise ValidationError(f"center has dimension {c.size}, cloud has {cloud.d}", field="center")
    if cloud.manifold.is_spherical:
        return geodesic_distances(cloud.points, c), "geodesic"
    return np.linalg.norm(cloud.points - c, axis=1), "euclidean"


def _profile_radius(cloud: PointCloud, radius_s: float) -> float:
    """Source radius in the profile's metric."""
    if cloud.manifold.is_spherical:
        return math.pi if radius_s >= 2.0 else (float(chord_to_angle(radius_s)) if radius_s > 0 else 0.0)
    return float(radius_s)


def radial_profile(
    cloud: PointCloud,
    v: VoltageFunction | np.ndarray,
    center: np.ndarray,
    n_bins: int,
    max_distance: Optional[float] = None,
    direction: Optional[np.ndarray] = None,
    max_angle: Optional[float] = None,
) -> RadialProfile:
    """Equal-width bins over [0, max distance].

    ``direction``/``max_angle`` restrict the profile to a cone around a ray
    from the centre, for sources where radial symmetry breaks (e.g. a corner).
    """
    if n_bins < 2:
        raise ValidationError(f"n_bins must be >= 2 (got {n_bins})", field="n_bins")
    values = v.values if isinstance(v, VoltageFunction) else np.asarray(v, dtype=float)
    if values.size != cloud.n:
        raise ValidationError(f"{values.size} voltages for {cloud.n} points", field="v")
    dist, metric = _distances(cloud, center)

    keep = np.ones(cloud.n, dtype=bool)
    if direction is not None:
        u = np.asarray(direction, dtype=float).ravel()
        u = u / np.linalg.norm(u)
        offs = cloud.points - np.asarray(center, dtype=float).ravel()
        norms = np.linalg.norm(offs, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where(norms > 0, offs @ u / norms, 1.0)
        keep = np.arccos(np.clip(cos, -1.0, 1.0)) <= (max_angle if max_angle is not None else math.pi / 12)
    dist, values = dist[keep], values[keep]

    top = float(max_distance) if max_distance is not None else float(dist.max(initial=0.0))
    if top <= 0.0:
        top = 1.0
    edges = np.linspace(0.0, top, n_bins + 1)
    idx = np.clip(np.floor(dist / (top / n_bins)).astype(np.int64), 0, n_bins - 1)
    inside = dist <= top
    idx, vals = idx[inside], values[inside]

    count = np.bincount(idx, minlength=n_bins)
    total = np.bincount(idx, weights=vals, minlength=n_bins)
    total_sq = np.bincount(idx, weights=vals * vals, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / count, np.nan)
        var = np.where(count > 1, (total_sq - count * mean * mean) / np.maximum(count - 1, 1), 0.0)
    std = np.where(count > 0, np.sqrt(np.maximum(var, 0.0)), np.nan)

    radius_s = v.source.radius_s if isinstance(v, VoltageFunction) else 0.0
    return RadialProfile(
        bin_edges=edges,
        bin_mean=mean,
        bin_count=count,
        bin_stddev=std,
        source_radius=_profile_radius(cloud, radius_s),
        metric=metric,
    )


def evaluate_profile(profile: RadialProfile, z: float | np.ndarray) -> float | np.ndarray:
    """Linear interpolation over defined bin centres; NaN outside them."""
    ok = profile.defined
    out = np.interp(z, profile.bin_centers[ok], profile.bin_mean[ok], left=np.nan, right=np.nan)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class MonotoneCheck:
    ok: bool
    violations: List[Tuple[int, int]]


def check_monotone(profile: RadialProfile, slack: float = 0.0) -> MonotoneCheck:
    """Flag consecutive defined bins beyond the source whose mean rises by more than ``slack``."""
    if slack < 0.0:
        raise ValidationError(f"slack must be >= 0 (got {slack})", field="slack")
    bins = np.flatnonzero(profile.defined & (profile.bin_edges[:-1] >= profile.source_radius))
    violations = [
        (int(a), int(b))
        for a, b in zip(bins[:-1], bins[1:])
        if profile.bin_mean[b] > profile.bin_mean[a] + slack
    ]
    return MonotoneCheck(ok=not violations, violations=violations)


# -------------------------
# Theoretical envelopes
# -------------------------
@dataclass(frozen=True)
class DecayBounds:
    """Exponential envelopes for the radial voltage outside the source.

    upper(t) bounds h(z1 + t * step_upper); lower(t) bounds h(z1 + t * step_lower).
    """

    a: float
    gamma: float
    gamma_stderr: float
    step_upper: float
    step_lower: float
    upper_rate: float
    lower_rate: float
    lower_factor: float
    z1: float
    r: float
    rho: float
    geometry: str
    dim: int

    def upper_envelope(self, t: float | np.ndarray) -> float | np.ndarray:
        return np.exp(-np.asarray(t, dtype=float) * self.upper_rate)

    def lower_envelope(self, t: float | np.ndarray, sigmas: float = 0.0) -> float | np.ndarray:
        """With ``sigmas`` > 0, Gamma is lowered by that many standard errors."""
        gamma = max(self.gamma - sigmas * self.gamma_stderr, 1e-300)
        rate = math.log((self.a + self.rho) / gamma)
        return np.exp(-self.lower_factor * np.asarray(t, dtype=float) * rate)

    def upper_distance(self, t: float | np.ndarray) -> float | np.ndarray:
        return self.z1 + np.asarray(t, dtype=float) * self.step_upper

    def lower_distance(self, t: float | np.ndarray) -> float | np.ndarray:
        return self.z1 + np.asarray(t, dtype=float) * self.step_lower

    def support_bounds(self, tau: float) -> Tuple[float, float]:
        """(r_l, r_u): distance beyond z1 over which the voltage stays >= tau."""
        log_tau = math.log(1.0 / tau)
        r_l = 0.5 * self.r * log_tau / math.log((self.a + self.rho) / self.gamma)
        r_u = self.r * log_tau / math.log1p(self.rho / self.a)
        return r_l, r_u

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def _ball_direction_samples(rng: np.random.Generator, n: int, d: int, r: float) -> np.ndarray:
    """Uniform points in the Euclidean d-ball of radius r around 0."""
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (r * rng.random(n) ** (1.0 / d))[:, None]


def _cap_samples(rng: np.random.Generator, n: int, x: np.ndarray, theta_max: float) -> np.ndarray:
    """Uniform points on the unit sphere within angle theta_max of x.

    Polar angles are drawn by rejection against the sin^(D-2) area density.
    """
    D = x.size
    peak = math.sin(min(theta_max, math.pi / 2))
    thetas: List[np.ndarray] = []
    have = 0
    while have < n:
        prop = theta_max * rng.random(2 * (n - have) + 64)
        accept = rng.random(prop.size) <= (np.sin(prop) / peak) ** (D - 2)
        thetas.append(prop[accept])
        have += int(accept.sum())
    theta = np.concatenate(thetas)[:n]
    u = rng.standard_normal((n, D))
    u -= np.outer(u @ x, x)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return np.cos(theta)[:, None] * x + np.sin(theta)[:, None] * u


def monte_carlo_ball_mass(
    spec: ManifoldSpec,
    r: float,
    n_samples: int = GAMMA_SAMPLES,
    seed: int = 0,
    center: Optional[np.ndarray] = None,
) -> Tuple[float, float]:
    """Fraction of uniform samples within Euclidean distance r of ``center``, with its standard error."""
    cloud = sample_manifold(spec, n_samples, seed)
    if center is None:
        if spec.is_spherical:
            center = np.eye(spec.dim)[0] if spec.kind == "sphere" else cloud.points[0]
        elif spec.kind == "interval":
            center = np.array([0.5 * (spec.lo + spec.hi)])
        elif spec.kind == "unit_square":
            center = np.array([0.5, 0.5])
        else:
            center = np.zeros(spec.ambient_dim)
    hit = np.linalg.norm(cloud.points - np.asarray(center, dtype=float), axis=1) <= r
    p = float(hit.mean())
    return p, math.sqrt(p * (1.0 - p) / n_samples)


def theoretical_bounds(
    r: float,
    rho: float,
    geometry: ManifoldSpec,
    source_radius: float,
    n_samples: int = GAMMA_SAMPLES,
    seed: int = 0,
) -> DecayBounds:
    """Decay envelopes for a sphere or disk with radial kernel radius r.

    ``a`` is the closed-form kernel-ball mass.  Gamma is the mass of the
    kernel ball around a point at distance z1 from the centre c, restricted
    to points within z1 - half-step of c, estimated by Monte Carlo.
    """
    if not (r > 0.0 and rho > 0.0):
        raise ValidationError(f"theoretical bounds need r > 0 and rho > 0 (got r={r}, rho={rho})", field="rho")
    if geometry.kind not in ("sphere", "disk"):
        raise ValidationError(f"decay envelopes are defined for sphere and disk (got {geometry.kind})", field="kind")
    a = kernel_ball_mass(geometry, r)
    rng = np.random.default_rng(seed)
    D = geometry.dim

    if geometry.kind == "sphere":
        z1 = float(chord_to_angle(source_radius))
        step_upper = float(chord_to_angle(r))
        step_lower = float(chord_to_angle(r / 2.0))
        half = step_lower
        lower_factor = 1.0
        c = np.zeros(D)
        c[-1] = 1.0
        x = np.zeros(D)
        x[0], x[-1] = math.sin(z1), math.cos(z1)
        ys = _cap_samples(rng, n_samples, x, step_upper)
        near = geodesic_distances(ys, c) <= z1 - half
    else:
        z1 = float(source_radius)
        step_upper = step_lower = float(r)
        half = r / 2.0
        lower_factor = 2.0
        x = np.zeros(D)
        x[0] = z1
        ys = x + _ball_direction_samples(rng, n_samples, D, r)
        near = np.linalg.norm(ys, axis=1) <= z1 - half

    if z1 <= half:
        raise ValidationError(
            f"source radius {source_radius} leaves no room for the lower envelope (needs > half a kernel step)",
            field="radius_s",
        )
    frac = float(near.mean())
    gamma = a * frac
    gamma_se = a * math.sqrt(frac * (1.0 - frac) / n_samples)
    if gamma <= 0.0:
        raise ValidationError("Monte Carlo found no mass for Gamma; increase the sample count", field="n_samples")
    bounds = DecayBounds(
        a=a,
        gamma=gamma,
        gamma_stderr=gamma_se,
        step_upper=step_upper,
        step_lower=step_lower,
        upper_rate=math.log1p(2.0 * rho / a),
        lower_rate=math.log((a + rho) / gamma),
        lower_factor=lower_factor,
        z1=z1,
        r=float(r),
        rho=float(rho),
        geometry=geometry.kind,
        dim=D,
    )
    logger.info(
        "bounds: %s a=%.4g Gamma=%.4g (+/- %.1e) upper_rate=%.4f lower_rate=%.4f",
        geometry.kind, a, gamma, gamma_se, bounds.upper_rate, bounds.lower_rate,
    )
    return bounds


@dataclass
class EnvelopeCheck:
    ok: bool
    # (t, distance, empirical, envelope, stderr, kind, passed)
    rows: List[Tuple[int, float, float, float, float, str, bool]] = field(default_factory=list)


def check_envelopes(
    profile: RadialProfile,
    bounds: DecayBounds,
    t_values: Sequence[int] = (1, 2, 3, 4, 5),
    sigmas: float = 3.0,
) -> EnvelopeCheck:
    """Empirical profile against both envelopes with ``sigmas`` standard errors of slack.

    The upper envelope is only checked where z >= 2r.
    """
    centers = profile.bin_centers
    se = profile.stderr
    rows = []

    def _stderr_at(z: float) -> float:
        k = int(np.clip(np.searchsorted(profile.bin_edges, z) - 1, 0, profile.n_bins - 1))
        s = se[k]
        return float(s) if np.isfinite(s) else 0.0

    two_r = 2.0 * (float(chord_to_angle(bounds.r)) if bounds.geometry == "sphere" else bounds.r)
    for t in t_values:
        zu = float(bounds.upper_distance(t))
        h = evaluate_profile(profile, zu)
        if zu >= two_r and np.isfinite(h):
            env = float(bounds.upper_envelope(t))
            s = _stderr_at(zu)
            rows.append((int(t), zu, float(h), env, s, "upper", bool(h <= env + sigmas * s)))
        zl = float(bounds.lower_distance(t))
        h = evaluate_profile(profile, zl)
        if np.isfinite(h):
            env = float(bounds.lower_envelope(t, sigmas=sigmas))
            s = _stderr_at(zl)
            rows.append((int(t), zl, float(h), env, s, "lower", bool(h >= env - sigmas * s)))
    return EnvelopeCheck(ok=all(r[-1] for r in rows), rows=rows)


# -------------------------
# Support radius
# -------------------------
@dataclass
class SupportReport:
    tau: float
    r_supp_empirical: float
    r_l: float
    r_u: float
    source_radius: float
    bin_width: float
    degenerate: bool = False
    rho: Optional[float] = None

    @property
    def beyond_source(self) -> float:
        """Support radius measured from the source edge."""
        return self.r_supp_empirical - self.source_radius

    def within_bounds(self, slack: Optional[float] = None) -> bool:
        s = self.bin_width if slack is None else slack
        return self.r_l - s <= self.beyond_source <= self.r_u + s

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__, beyond_source=self.beyond_source)


def support_radius(
    profile: RadialProfile, tau: float, bounds: Optional[DecayBounds] = None
) -> SupportReport:
    """Largest bin centre beyond the source whose mean is >= tau.

    ``r_supp_empirical`` is measured from the source centre, like the bins.
    ``r_l`` and ``r_u`` are measured from the source edge, so compare them with
    ``beyond_source`` (= r_supp_empirical - source_radius), as ``within_bounds``
    does.  Both bounds are NaN without ``bounds``.
    """
    if not (0.0 < tau <= 1.0):
        raise ValidationError(f"tau must lie in (0, 1] (got {tau})", field="tau")
    centers = profile.bin_centers
    hot = profile.defined & (centers > profile.source_radius) & (profile.bin_mean >= tau)
    if tau >= 1.0:
        # only the source attains 1
        hot[:] = False
    degenerate = not hot.any()
    if degenerate:
        logger.warning("support radius: no bin beyond the source reaches tau=%g", tau)
        r_emp = profile.source_radius
    else:
        r_emp = float(centers[hot].max())
    r_l, r_u = bounds.support_bounds(tau) if bounds is not None and tau < 1.0 else (math.nan, math.nan)
    if tau == 1.0 and bounds is not None:
        r_l = r_u = 0.0
    return SupportReport(
        tau=float(tau),
        r_supp_empirical=r_emp,
        r_l=r_l,
        r_u=r_u,
        source_radius=profile.source_radius,
        bin_width=profile.bin_width,
        degenerate=degenerate,
        rho=bounds.rho if bounds is not None else None,
    )


def rho_sweep_support(
    cloud: PointCloud,
    kernel: KernelSpec,
    center: np.ndarray,
    radius_s: float,
    rho_values: Sequence[float],
    tau: float,
    n_bins: int,
    max_distance: Optional[float] = None,
    cfg: Optional[SolverConfig] = None,
) -> List[SupportReport]:
    """Empirical support radius per ground weight on one fixed cloud."""
    base = build_grounded_graph(cloud, kernel, float(rho_values[0]))
    source = select_source(cloud, center, radius_s)
    reports = []
    for rho in rho_values:
        v, _ = solve(base.with_rho(float(rho)), source, cfg)
        prof = radial_profile(cloud, v, center, n_bins, max_distance)
        rep = support_radius(prof, tau)
        rep.rho = float(rho)
        reports.append(rep)
        logger.info("rho sweep: rho=%.4g r_supp=%.4f", rho, rep.r_supp_empirical)
    return reports


# -------------------------
# Convergence in n
# -------------------------
@dataclass
class ConvergenceReport:
    n_list: List[int]
    seeds: List[int]
    grid: np.ndarray
    # values[i, s, g]: n_list[i], seeds[s], grid point g; NaN where undefined
    values: np.ndarray
    excluded: np.ndarray
    sup_diff: np.ndarray
    mean_diff: np.ndarray

    @property
    def median_sup_diff(self) -> np.ndarray:
        return np.median(self.sup_diff, axis=1) if self.sup_diff.size else np.zeros(0)

    @property
    def median_mean_diff(self) -> np.ndarray:
        return np.median(self.mean_diff, axis=1) if self.mean_diff.size else np.zeros(0)

    def median_profile(self, i: int) -> np.ndarray:
        return np.nanmedian(self.values[i], axis=0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_list": self.n_list,
            "seeds": self.seeds,
            "excluded": self.excluded.tolist(),
            "sup_diff": self.sup_diff.tolist(),
            "mean_diff": self.mean_diff.tolist(),
            "median_sup_diff": self.median_sup_diff.tolist(),
            "median_mean_diff": self.median_mean_diff.tolist(),
        }


def convergence_study(
    spec: ManifoldSpec,
    kernel: KernelSpec,
    rho_g: float,
    source_center: np.ndarray,
    radius_s: float,
    n_list: Sequence[int],
    eval_grid: np.ndarray,
    seeds: Sequence[int],
    cfg: Optional[SolverConfig] = None,
    workers: Optional[int] = None,
) -> ConvergenceReport:
    """Sample, build, solve and extend onto ``eval_grid`` for every (n, seed).

    Samples are nested: for each seed the size-n cloud is the first n points
    of the largest one.
    """
    ns = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(ns[:-1], ns[1:])):
        raise ValidationError(f"n_list must be strictly increasing (got {ns})", field="n_list")
    grid = np.asarray(eval_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid.reshape(-1, 1)
    outside = ~spec.contains(grid)
    if outside.any():
        raise ValidationError(f"{int(outside.sum())} grid point(s) lie off the manifold", field="eval_grid")

    clouds = {int(s): sample_manifold(spec, ns[-1], int(s)) for s in seeds}

    def _cell(job: Tuple[int, int]) -> Tuple[int, int, np.ndarray]:
        i, s_idx = job
        seed = int(seeds[s_idx])
        cloud = clouds[seed].subset(np.arange(ns[i]))
        graph = build_grounded_graph(cloud, kernel, rho_g)
        source = select_source(cloud, source_center, radius_s)
        v, _ = solve(graph, source, cfg)
        try:
            vals = extend_voltage(graph, v, grid)
        except UndefinedExtensionError:
            vals = extend_voltage(graph, v, grid, strict=False)
        return i, s_idx, vals

    jobs = [(i, s) for i in range(len(ns)) for s in range(len(seeds))]
    n_workers = max(1, min(workers if workers is not None else max_workers(), len(jobs)))
    if n_workers == 1:
        results = [_cell(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_cell, jobs))

    values = np.full((len(ns), len(seeds), grid.shape[0]), np.nan)
    for i, s_idx, vals in results:
        values[i, s_idx] = vals
    excluded = np.isnan(values).sum(axis=2)
    if excluded.any():
        logger.warning("convergence: %d undefined grid evaluations excluded", int(excluded.sum()))

    sup_diff = np.zeros((max(len(ns) - 1, 0), len(seeds)))
    mean_diff = np.zeros_like(sup_diff)
    for i in range(len(ns) - 1):
        for s_idx in range(len(seeds)):
            diff = np.abs(values[i, s_idx] - values[i + 1, s_idx])
            diff = diff[np.isfinite(diff)]
            sup_diff[i, s_idx] = diff.max() if diff.size else math.nan
            mean_diff[i, s_idx] = diff.mean() if diff.size else math.nan
    report = ConvergenceReport(
        n_list=ns,
        seeds=[int(s) for s in seeds],
        grid=grid,
        values=values,
        excluded=excluded,
        sup_diff=sup_diff,
        mean_diff=mean_diff,
    )
    logger.info("convergence: median sup differences %s", np.array2string(report.median_sup_diff, precision=4))
    return report
