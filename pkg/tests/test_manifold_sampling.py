"""
Tests for manifold sampling and kernels
"""

import math

import numpy as np
import pytest

from grounded_voltage.config import ValidationError
from grounded_voltage.manifold_sampling import (
    KernelSpec,
    ManifoldSpec,
    angle_to_chord,
    azimuth_of,
    chord_to_angle,
    eval_kernel,
    geodesic_distance,
    kernel_ball_mass,
    kernel_matrix,
    sample_manifold,
    spherical_cap_fraction,
    unit_volume_radius,
)


# -------------------------
# Specs
# -------------------------

def test_interval_requires_lo_below_hi():
    """Test interval validation."""
    with pytest.raises(ValidationError) as exc:
        ManifoldSpec.interval(3.0, 3.0)
    assert exc.value.field == "lo"


def test_sphere_requires_dim_two():
    with pytest.raises(ValidationError):
        ManifoldSpec.sphere(1)


def test_segment_azimuth_range():
    with pytest.raises(ValidationError):
        ManifoldSpec.sphere_segment(3, (1.0, 0.5))


def test_spec_dict_round_trip():
    """Test ManifoldSpec/KernelSpec serialization."""
    for spec in (
        ManifoldSpec.interval(0.0, 3.0),
        ManifoldSpec.unit_square(),
        ManifoldSpec.sphere(3),
        ManifoldSpec.sphere_segment(3),
        ManifoldSpec.disk(2),
    ):
        assert ManifoldSpec.from_dict(spec.to_dict()) == spec
    k = KernelSpec.gaussian(0.2, cutoff=4.0)
    assert KernelSpec.from_dict(k.to_dict()) == k


def test_kernel_validation():
    with pytest.raises(ValidationError):
        KernelSpec.radial(0.0)
    with pytest.raises(ValidationError):
        KernelSpec.from_dict({"kind": "triangle", "bandwidth": 1.0})


# -------------------------
# Sampling
# -------------------------

def test_sampling_is_deterministic():
    """Same seed, same points."""
    spec = ManifoldSpec.unit_square()
    a = sample_manifold(spec, 100, 7)
    b = sample_manifold(spec, 100, 7)
    c = sample_manifold(spec, 100, 8)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


@pytest.mark.parametrize(
    "spec",
    [
        ManifoldSpec.interval(0.0, 3.0),
        ManifoldSpec.unit_square(),
        ManifoldSpec.sphere(3),
        ManifoldSpec.sphere_segment(3),
        ManifoldSpec.disk(2),
    ],
)
def test_samples_lie_on_manifold(spec):
    cloud = sample_manifold(spec, 500, 0)
    assert cloud.n == 500
    assert cloud.d == spec.ambient_dim
    cloud.check_membership()


def test_segment_samples_in_upper_half():
    """Azimuth in [0, pi] means x_2 >= 0."""
    cloud = sample_manifold(ManifoldSpec.sphere_segment(3), 2000, 1)
    assert np.all(cloud.points[:, 1] >= -1e-12)


def test_segment_is_uniform_in_azimuth():
    """Two-quadrant segment: half the mass lies at azimuth [0, pi/2]."""
    cloud = sample_manifold(ManifoldSpec.sphere_segment(3), 10_000, 2)
    phi = azimuth_of(cloud.points)
    frac = float(np.mean(phi <= math.pi / 2))
    assert frac == pytest.approx(0.5, abs=0.02)


def test_interval_mean():
    cloud = sample_manifold(ManifoldSpec.interval(0.0, 3.0), 20000, 3)
    assert abs(cloud.points.mean() - 1.5) < 0.05


def test_sample_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        sample_manifold(ManifoldSpec.unit_square(), 0, 0)
    with pytest.raises(ValidationError):
        sample_manifold(ManifoldSpec.unit_square(), 10, -1)
    with pytest.raises(ValidationError):
        sample_manifold(ManifoldSpec.external(2), 10, 0)


def test_unit_volume_disk_radius():
    """Default disk radius gives unit volume."""
    assert ManifoldSpec.disk(2).disk_radius == pytest.approx(1.0 / math.sqrt(math.pi))
    assert unit_volume_radius(1) == pytest.approx(0.5)


# -------------------------
# Kernels and metrics
# -------------------------

def test_radial_kernel_is_closed_ball():
    k = KernelSpec.radial(0.5)
    assert eval_kernel(k, np.array([0.0]), np.array([0.5])) == 1.0
    assert eval_kernel(k, np.array([0.0]), np.array([0.5000001])) == 0.0


def test_gaussian_kernel_value():
    k = KernelSpec.gaussian(1.0)
    assert eval_kernel(k, np.zeros(2), np.array([1.0, 0.0])) == pytest.approx(math.exp(-0.5))
    assert k.support_radius == pytest.approx(3.0)
    assert math.isinf(KernelSpec.gaussian(1.0, cutoff=None).support_radius)


def test_kernel_dimension_mismatch():
    with pytest.raises(ValidationError):
        eval_kernel(KernelSpec.radial(1.0), np.zeros(2), np.zeros(3))
    with pytest.raises(ValidationError):
        kernel_matrix(KernelSpec.radial(1.0), np.zeros((2, 2)), np.zeros((2, 3)))


def test_kernel_matrix_shape():
    K = kernel_matrix(KernelSpec.radial(1.0), np.zeros((4, 2)), np.ones((3, 2)))
    assert K.shape == (4, 3)
    assert np.all(K == 0.0)


def test_chord_angle_conversions():
    assert chord_to_angle(2.0) == pytest.approx(math.pi)
    assert chord_to_angle(math.sqrt(2.0)) == pytest.approx(math.pi / 2)
    assert angle_to_chord(chord_to_angle(0.3)) == pytest.approx(0.3)
    with pytest.raises(ValidationError):
        chord_to_angle(2.5)


def test_geodesic_distance():
    e1, e2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    assert geodesic_distance(e1, e2) == pytest.approx(math.pi / 2)
    assert geodesic_distance(e1, -e1) == pytest.approx(math.pi)
    with pytest.raises(ValidationError):
        geodesic_distance(e1, 2 * e2)


def test_cap_fraction_on_s2():
    """On S^2 the cap of angle theta covers (1 - cos theta) / 2."""
    for theta in (0.1, 1.0, math.pi / 2, math.pi):
        assert spherical_cap_fraction(theta, 3) == pytest.approx((1 - math.cos(theta)) / 2)


def test_kernel_ball_mass_closed_forms():
    assert kernel_ball_mass(ManifoldSpec.interval(0.0, 3.0), 0.05) == pytest.approx(0.1 / 3.0)
    assert kernel_ball_mass(ManifoldSpec.unit_square(), 0.05) == pytest.approx(math.pi * 0.0025)
    disk = ManifoldSpec.disk(2)
    assert kernel_ball_mass(disk, 0.05) == pytest.approx(math.pi * 0.0025)
