"""
Tests for profiles, decay envelopes, support radii and convergence studies
"""

import math

import numpy as np
import pytest

from grounded_voltage.analysis import (
    RadialProfile,
    SupportReport,
    check_envelopes,
    check_monotone,
    convergence_study,
    evaluate_profile,
    monte_carlo_ball_mass,
    radial_profile,
    rho_sweep_support,
    support_radius,
    theoretical_bounds,
)
from grounded_voltage.config import ValidationError
from grounded_voltage.graph_construction import build_grounded_graph, select_source
from grounded_voltage.manifold_sampling import (
    KernelSpec,
    ManifoldSpec,
    chord_to_angle,
    kernel_ball_mass,
    sample_manifold,
)
from grounded_voltage.voltage_solver import SolverConfig, VoltageFunction, solve


def make_profile(means, width=0.1, source_radius=0.0, counts=None):
    means = np.asarray(means, dtype=float)
    counts = np.full(means.size, 10) if counts is None else np.asarray(counts)
    return RadialProfile(
        bin_edges=width * np.arange(means.size + 1),
        bin_mean=means,
        bin_count=counts,
        bin_stddev=np.full(means.size, 0.01),
        source_radius=source_radius,
    )


@pytest.fixture(scope="module")
def disk_cloud():
    return sample_manifold(ManifoldSpec.disk(2), 2000, 1)


# -------------------------
# Profiles
# -------------------------

def test_constant_profile(disk_cloud):
    prof = radial_profile(disk_cloud, np.ones(disk_cloud.n), np.zeros(2), 10)
    assert np.all(prof.bin_mean[prof.defined] == 1.0)
    assert prof.bin_count.sum() == disk_cloud.n
    assert prof.metric == "euclidean"


def test_indicator_profile(disk_cloud):
    """Source indicator with bins aligned to the source edge."""
    src = select_source(disk_cloud, np.zeros(2), 0.2)
    v = VoltageFunction(src.indicator(disk_cloud.n).astype(float), src)
    prof = radial_profile(disk_cloud, v, np.zeros(2), 8, max_distance=0.8)
    inside = prof.bin_edges[1:] <= 0.2
    assert np.all(prof.bin_mean[inside & prof.defined] == 1.0)
    assert np.all(prof.bin_mean[~inside & prof.defined] == 0.0)
    assert prof.source_radius == 0.2


def test_sphere_profile_is_geodesic():
    cloud = sample_manifold(ManifoldSpec.sphere(3), 500, 0)
    prof = radial_profile(cloud, np.ones(cloud.n), np.array([0.0, 0.0, 1.0]), 6)
    assert prof.metric == "geodesic"
    assert prof.bin_edges[-1] <= math.pi + 1e-12


def test_profile_validation(disk_cloud):
    with pytest.raises(ValidationError):
        radial_profile(disk_cloud, np.ones(disk_cloud.n), np.zeros(2), 1)
    with pytest.raises(ValidationError):
        radial_profile(disk_cloud, np.ones(3), np.zeros(2), 5)


def test_evaluate_profile_interpolates():
    prof = make_profile([1.0, 0.5, 0.0])
    assert evaluate_profile(prof, 0.1) == pytest.approx(0.75)
    assert math.isnan(evaluate_profile(prof, 0.29))


def test_empty_bins_are_undefined():
    prof = make_profile([1.0, np.nan, 0.2], counts=[5, 0, 5])
    assert prof.defined.tolist() == [True, False, True]
    assert math.isnan(prof.stderr[1])


# -------------------------
# Monotonicity
# -------------------------

def test_monotone_decreasing_and_flat():
    assert check_monotone(make_profile([1.0, 0.6, 0.3, 0.1])).ok
    assert check_monotone(make_profile([0.4, 0.4, 0.4])).ok


def test_monotone_violation():
    res = check_monotone(make_profile([1.0, 0.5, 0.6, 0.1]))
    assert not res.ok
    assert res.violations == [(1, 2)]
    assert check_monotone(make_profile([1.0, 0.5, 0.6, 0.1]), slack=0.2).ok


def test_monotone_ignores_source_bins():
    assert check_monotone(make_profile([0.5, 1.0, 0.8], source_radius=0.1)).ok


# -------------------------
# Theoretical bounds
# -------------------------

@pytest.fixture(scope="module")
def disk_bounds():
    disk = ManifoldSpec.disk(2)
    r = 0.05
    return theoretical_bounds(r, kernel_ball_mass(disk, r), disk, 0.1, n_samples=200_000, seed=0)


def test_upper_envelope_is_three_to_minus_t(disk_bounds):
    """rho = a gives ln(1 + 2) per step."""
    for t in range(1, 6):
        assert disk_bounds.upper_envelope(t) == pytest.approx(3.0 ** (-t))


def test_gamma_below_a(disk_bounds):
    assert 0.0 < disk_bounds.gamma <= disk_bounds.a
    assert disk_bounds.a == pytest.approx(math.pi * 0.0025)
    assert disk_bounds.lower_rate > 0.0 and disk_bounds.upper_rate > 0.0
    assert disk_bounds.lower_factor == 2.0


def test_support_upper_bound_value(disk_bounds):
    """0.05 ln(100) / ln 2."""
    r_l, r_u = disk_bounds.support_bounds(0.01)
    assert r_u == pytest.approx(0.3322, abs=1e-4)
    assert r_l <= r_u


def test_envelope_distances(disk_bounds):
    assert disk_bounds.upper_distance(2) == pytest.approx(0.1 + 2 * 0.05)
    assert disk_bounds.lower_distance(2) == pytest.approx(0.1 + 2 * 0.05)
    assert disk_bounds.lower_envelope(1, sigmas=3.0) <= disk_bounds.lower_envelope(1)


def test_sphere_bounds_steps():
    sphere = ManifoldSpec.sphere(3)
    r = 0.2
    b = theoretical_bounds(r, kernel_ball_mass(sphere, r), sphere, 0.5, n_samples=100_000)
    assert b.step_upper == pytest.approx(chord_to_angle(r))
    assert b.step_lower == pytest.approx(chord_to_angle(r / 2))
    assert b.z1 == pytest.approx(chord_to_angle(0.5))
    assert b.lower_factor == 1.0
    assert 0.0 < b.gamma <= b.a


def test_bounds_validation():
    disk = ManifoldSpec.disk(2)
    with pytest.raises(ValidationError):
        theoretical_bounds(0.05, 0.0, disk, 0.1)
    with pytest.raises(ValidationError):
        theoretical_bounds(0.05, 0.01, ManifoldSpec.interval(0.0, 1.0), 0.1)
    with pytest.raises(ValidationError):
        theoretical_bounds(0.05, 0.01, disk, 0.01, n_samples=1000)


def test_monte_carlo_mass_matches_closed_form():
    disk = ManifoldSpec.disk(2)
    p, se = monte_carlo_ball_mass(disk, 0.05, n_samples=400_000, seed=3)
    assert abs(p - kernel_ball_mass(disk, 0.05)) <= 4 * se


# -------------------------
# Support radius
# -------------------------

def test_support_radius_synthetic():
    prof = make_profile([1.0, 0.5, 0.2, 0.05, 0.01], source_radius=0.1)
    rep = support_radius(prof, 0.1)
    assert rep.r_supp_empirical == pytest.approx(0.25)
    assert rep.beyond_source == pytest.approx(0.15)
    assert not rep.degenerate
    assert math.isnan(rep.r_u)


def test_within_bounds_uses_distance_past_source():
    """r_l and r_u are compared with the distance past the source edge, not from the centre."""
    rep = SupportReport(tau=0.1, r_supp_empirical=0.25, r_l=0.1, r_u=0.2, source_radius=0.1, bin_width=0.1)
    assert rep.within_bounds(slack=0.0)
    far = SupportReport(tau=0.1, r_supp_empirical=0.45, r_l=0.1, r_u=0.2, source_radius=0.1, bin_width=0.1)
    assert not far.within_bounds(slack=0.0)


def test_support_radius_tau_one_is_source():
    prof = make_profile([1.0, 1.0, 0.5], source_radius=0.1)
    rep = support_radius(prof, 1.0)
    assert rep.degenerate
    assert rep.r_supp_empirical == 0.1


def test_support_radius_validation():
    with pytest.raises(ValidationError):
        support_radius(make_profile([1.0, 0.5]), 0.0)


# -------------------------
# Convergence
# -------------------------

def test_convergence_singleton():
    line = ManifoldSpec.interval(0.0, 3.0)
    grid = np.linspace(0.0, 3.0, 10)
    rep = convergence_study(
        line, KernelSpec.radial(0.1), 0.05, np.array([2.5]), 0.5, [256], grid, [0], workers=1
    )
    assert rep.values.shape == (1, 1, 10)
    assert rep.sup_diff.size == 0


def test_convergence_validation():
    line = ManifoldSpec.interval(0.0, 3.0)
    with pytest.raises(ValidationError):
        convergence_study(line, KernelSpec.radial(0.1), 0.05, np.array([2.5]), 0.5,
                          [512, 256], np.linspace(0, 3, 5), [0])
    with pytest.raises(ValidationError):
        convergence_study(line, KernelSpec.radial(0.1), 0.05, np.array([2.5]), 0.5,
                          [256], np.linspace(0, 4, 5), [0])


@pytest.mark.slow
def test_convergence_on_line():
    """Nested samples on [0, 3] with source [2, 3]: successive differences shrink."""
    line = ManifoldSpec.interval(0.0, 3.0)
    grid = np.linspace(0.0, 3.0, 50)
    rep = convergence_study(
        line, KernelSpec.radial(0.05), 0.05, np.array([2.5]), 0.5,
        [2**9, 2**11, 2**13], grid, [0, 1, 2, 3, 4],
    )
    assert rep.sup_diff.shape == (2, 5)
    med = rep.median_sup_diff
    assert med.shape == (2,)
    assert med[1] < med[0]


# -------------------------
# Disk experiments
# -------------------------

@pytest.fixture(scope="module")
def disk_instance():
    disk = ManifoldSpec.disk(2)
    r = 0.05
    cloud = sample_manifold(disk, 2**13, 0)
    rho = kernel_ball_mass(disk, r)
    graph = build_grounded_graph(cloud, KernelSpec.radial(r), rho)
    source = select_source(cloud, np.zeros(2), 0.1)
    return cloud, graph, source, theoretical_bounds(r, rho, disk, 0.1, n_samples=200_000)


@pytest.fixture(scope="module")
def disk_solution(disk_instance):
    cloud, graph, source, bounds = disk_instance
    v, _ = solve(graph, source)
    return cloud, v, bounds


@pytest.mark.slow
def test_disk_profile_monotone(disk_solution):
    cloud, v, _ = disk_solution
    prof = radial_profile(cloud, v, np.zeros(2), 40, max_distance=0.5)
    slack = 2.0 * float(np.nanmax(prof.stderr))
    assert check_monotone(prof, slack).ok


@pytest.mark.slow
def test_disk_envelopes(disk_solution):
    cloud, v, bounds = disk_solution
    prof = radial_profile(cloud, v, np.zeros(2), 40, max_distance=0.5)
    res = check_envelopes(prof, bounds)
    assert res.rows
    assert res.ok


@pytest.mark.slow
def test_disk_support_within_bounds(disk_solution):
    cloud, v, bounds = disk_solution
    prof = radial_profile(cloud, v, np.zeros(2), 40, max_distance=0.5)
    rep = support_radius(prof, 0.01, bounds)
    assert rep.within_bounds()


@pytest.mark.slow
def test_localized_support_within_bounds(disk_instance, disk_solution):
    cloud, graph, source, bounds = disk_instance
    v, report = solve(graph, source, SolverConfig(mode="localized", tau=0.01))
    assert report.converged
    assert v.support is not None and v.support.size > source.size
    prof = radial_profile(cloud, v, np.zeros(2), 40, max_distance=0.5)
    rep = support_radius(prof, 0.01, bounds)
    assert rep.within_bounds()
    # agrees with the full solve to within one bin
    full = support_radius(radial_profile(cloud, disk_solution[1], np.zeros(2), 40, max_distance=0.5), 0.01)
    assert abs(rep.r_supp_empirical - full.r_supp_empirical) <= prof.bin_width + 1e-12


@pytest.mark.slow
def test_rho_sweep_shrinks_support():
    disk = ManifoldSpec.disk(2)
    r = 0.05
    a = kernel_ball_mass(disk, r)
    cloud = sample_manifold(disk, 2**12, 2)
    reports = rho_sweep_support(
        cloud, KernelSpec.radial(r), np.zeros(2), 0.1, [0.25 * a, a, 4 * a],
        tau=0.01, n_bins=50, max_distance=0.5, cfg=SolverConfig(tol=1e-10),
    )
    radii = [rep.r_supp_empirical for rep in reports]
    assert radii[0] > radii[1] > radii[2]


# -------------------------
# Sphere experiments
# -------------------------

def _sphere_profile(seed):
    sphere = ManifoldSpec.sphere(3)
    r = 0.2
    cloud = sample_manifold(sphere, 2**12, seed)
    graph = build_grounded_graph(cloud, KernelSpec.radial(r), 0.1 * kernel_ball_mass(sphere, r))
    north = np.array([0.0, 0.0, 1.0])
    v, _ = solve(graph, select_source(cloud, north, 0.2), SolverConfig(tol=1e-10))
    return radial_profile(cloud, v, north, 30)


@pytest.fixture(scope="module")
def sphere_profiles():
    return _sphere_profile(0), _sphere_profile(1)


@pytest.mark.slow
def test_sphere_profile_monotone(sphere_profiles):
    for prof in sphere_profiles:
        slack = 2.0 * float(np.nanmax(prof.stderr))
        assert check_monotone(prof, slack).ok


@pytest.mark.slow
def test_sphere_profile_reproducible_across_seeds(sphere_profiles):
    """Bin means of two independent samples agree within 3 pooled stddevs in >= 95% of bins."""
    a, b = sphere_profiles
    both = a.defined & b.defined
    pooled = np.sqrt(0.5 * (a.bin_stddev[both] ** 2 + b.bin_stddev[both] ** 2))
    agree = np.abs(a.bin_mean[both] - b.bin_mean[both]) <= 3.0 * pooled + 1e-12
    assert both.sum() >= 20
    assert agree.mean() >= 0.95
