"""
Tests for the grounded voltage solvers
"""

import math

import numpy as np
import pytest

from grounded_voltage.config import (
    EmptySourceError,
    IllPosedError,
    SizeLimitError,
    UndefinedExtensionError,
    ValidationError,
)
from grounded_voltage.graph_construction import (
    GroundedGraph,
    SourceRegion,
    build_grounded_graph,
    select_source,
)
from grounded_voltage.manifold_sampling import KernelSpec, ManifoldSpec, PointCloud, sample_manifold
from grounded_voltage.voltage_solver import (
    SolverConfig,
    VoltageFunction,
    extend_voltage,
    fixed_point_residual,
    solve,
    solve_direct_oracle,
    solve_grounded_emv,
    solve_localized,
)

TIGHT = SolverConfig(tol=1e-13)


def line_cloud(xs):
    return PointCloud(np.asarray(xs, dtype=float).reshape(-1, 1), ManifoldSpec.interval(0.0, 10.0))


def node_source(*nodes):
    return SourceRegion(center=np.zeros(0), radius_s=0.0, mask=np.asarray(nodes, dtype=np.int64))


@pytest.fixture
def two_node():
    cloud = line_cloud([0.0, 1.0])
    graph = build_grounded_graph(cloud, KernelSpec.radial(1.0), 1.0)
    return graph, select_source(cloud, np.array([0.0]), 0.1)


@pytest.fixture
def path3():
    cloud = line_cloud([0.0, 1.0, 2.0])
    graph = build_grounded_graph(cloud, KernelSpec.radial(1.0), 1.0)
    return graph, select_source(cloud, np.array([0.0]), 0.1)


@pytest.fixture(scope="module")
def square_instance():
    cloud = sample_manifold(ManifoldSpec.unit_square(), 300, 4)
    graph = build_grounded_graph(cloud, KernelSpec.radial(0.15), 0.05)
    return graph, select_source(cloud, np.array([0.5, 0.5]), 0.1)


# -------------------------
# Closed forms
# -------------------------

def test_two_node_closed_form(two_node):
    """(1/2) / (1 + 1/2) = 1/3."""
    graph, src = two_node
    v, report = solve_grounded_emv(graph, src, TIGHT)
    assert v.values[0] == 1.0
    assert v.values[1] == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert report.converged


def test_path_closed_form(path3):
    """Hand-solved 2x2 system: 4/19 and 1/19."""
    graph, src = path3
    v, _ = solve_grounded_emv(graph, src, TIGHT)
    assert v.values[1] == pytest.approx(4.0 / 19.0, abs=1e-12)
    assert v.values[2] == pytest.approx(1.0 / 19.0, abs=1e-12)


def test_direct_oracle_closed_forms(two_node, path3):
    v = solve_direct_oracle(*two_node)
    assert v.values[1] == pytest.approx(1.0 / 3.0, abs=1e-12)
    v = solve_direct_oracle(*path3)
    assert v.values[1:] == pytest.approx([4.0 / 19.0, 1.0 / 19.0], abs=1e-12)


def test_graph_only_fixture():
    """Edge-list graph with node-index source."""
    graph = GroundedGraph.from_edges(2, np.array([0]), np.array([1]), np.array([0.5]), 1.0)
    v, _ = solve(graph, node_source(0), TIGHT)
    assert v.values.tolist() == pytest.approx([1.0, 1.0 / 3.0], abs=1e-12)


# -------------------------
# rho = 0 and bad sources
# -------------------------

def test_rho_zero_connected_gives_ones(path3):
    graph, src = path3
    v, _ = solve_grounded_emv(graph.with_rho(0.0), src)
    assert np.all(v.values == 1.0)
    v = solve_direct_oracle(graph.with_rho(0.0), src)
    assert np.all(v.values == 1.0)


def test_rho_zero_disconnected_is_ill_posed():
    cloud = line_cloud([0.0, 1.0, 5.0, 6.0])
    graph = build_grounded_graph(cloud, KernelSpec.radial(1.0), 0.0)
    with pytest.raises(IllPosedError) as exc:
        solve_grounded_emv(graph, select_source(cloud, np.array([0.0]), 0.1))
    assert "ill-posed" in str(exc.value)


def test_disconnected_with_ground_is_zero():
    cloud = line_cloud([0.0, 1.0, 5.0, 6.0])
    graph = build_grounded_graph(cloud, KernelSpec.radial(1.0), 0.5)
    v, _ = solve_grounded_emv(graph, select_source(cloud, np.array([0.0]), 0.1), TIGHT)
    assert v.values[2] == 0.0 and v.values[3] == 0.0


def test_empty_source_raises(path3):
    graph, _ = path3
    with pytest.raises(EmptySourceError):
        solve_grounded_emv(graph, node_source())


def test_solver_config_validation():
    with pytest.raises(ValidationError):
        SolverConfig(tol=0.0).validate()
    with pytest.raises(ValidationError):
        SolverConfig(max_iters=0).validate()
    with pytest.raises(ValidationError) as exc:
        SolverConfig(mode="localized").validate()
    assert exc.value.field == "tau"
    with pytest.raises(ValidationError):
        SolverConfig(mode="chebyshev").validate()


def test_direct_oracle_size_cap(monkeypatch, path3):
    monkeypatch.setenv("GV_DIRECT_MAX_N", "2")
    with pytest.raises(SizeLimitError):
        solve_direct_oracle(*path3)


# -------------------------
# Properties on a random instance
# -------------------------

def test_maximum_principle(square_instance):
    graph, src = square_instance
    v, _ = solve_grounded_emv(graph, src)
    assert np.all(v.values >= 0.0) and np.all(v.values <= 1.0)
    assert np.all(v.values[src.mask] == 1.0)


def test_fixed_point_residual_within_tol(square_instance):
    graph, src = square_instance
    cfg = SolverConfig(tol=1e-10)
    v, report = solve_grounded_emv(graph, src, cfg)
    assert report.final_residual <= cfg.tol
    # one more application of the map moves the iterate by at most the last step
    assert fixed_point_residual(graph, src, v.values) <= cfg.tol


def random_instance(seed):
    """Random geometric graph: n in [50, 500], radial kernel, rho_g uniform in [0.1, 10]."""
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(50, 501))
    r = float(rng.uniform(0.1, 0.3))
    rho = float(rng.uniform(0.1, 10.0))
    cloud = sample_manifold(ManifoldSpec.unit_square(), n, seed)
    graph = build_grounded_graph(cloud, KernelSpec.radial(r), rho)
    return graph, select_source(cloud, cloud.points[0], 0.5 * r)


@pytest.mark.parametrize("seed", range(50))
def test_oracle_equivalence(seed):
    graph, src = random_instance(seed)
    assert graph.n <= 500 and 0.1 <= graph.rho <= 10.0
    v_power, _ = solve_grounded_emv(graph, src, SolverConfig(tol=1e-12))
    v_direct = solve_direct_oracle(graph, src)
    assert np.max(np.abs(v_power.values - v_direct.values)) <= 1e-9


@pytest.mark.parametrize("seed", range(50))
def test_contraction_ratio_and_iteration_bound(seed):
    graph, src = random_instance(seed)
    cfg = SolverConfig(tol=1e-10)
    _, report = solve_grounded_emv(graph, src, cfg)
    assert report.contraction_bound < 1.0
    assert report.contraction_ratio_observed <= report.contraction_bound + 1e-9
    bound = math.log(1.0 / cfg.tol) / math.log1p(graph.rho / graph.max_degree) + 2
    assert report.iterations <= bound


def test_max_iters_flagged(square_instance):
    graph, src = square_instance
    _, report = solve_grounded_emv(graph, src, SolverConfig(tol=1e-14, max_iters=2))
    assert not report.converged
    assert report.iterations == 2


def test_solve_dispatch_modes(square_instance):
    graph, src = square_instance
    v_full, _ = solve(graph, src, SolverConfig(tol=1e-12))
    v_direct, rep = solve(graph, src, SolverConfig(mode="direct_oracle"))
    assert rep.mode == "direct_oracle"
    assert np.max(np.abs(v_full.values - v_direct.values)) <= 1e-9


def test_deterministic(square_instance):
    graph, src = square_instance
    a, _ = solve_grounded_emv(graph, src)
    b, _ = solve_grounded_emv(graph, src)
    assert np.array_equal(a.values, b.values)


# -------------------------
# Localized solve
# -------------------------

def test_localized_tiny_tau_matches_full(square_instance):
    graph, src = square_instance
    v_full, _ = solve_grounded_emv(graph, src, SolverConfig(tol=1e-12))
    v_loc, rep = solve_localized(graph, src, SolverConfig(tol=1e-12, mode="localized", tau=1e-12))
    assert rep.mode == "localized"
    assert np.max(np.abs(v_full.values - v_loc.values)) <= 1e-9


def test_localized_support_within_tau(square_instance):
    graph, src = square_instance
    tau = 0.01
    v_full, _ = solve_grounded_emv(graph, src, SolverConfig(tol=1e-12))
    v_loc, _ = solve(graph, src, SolverConfig(tol=1e-12, mode="localized", tau=tau))
    support = v_loc.support
    assert np.all(np.diff(support) > 0)
    assert np.all(v_loc.values[support] >= tau)
    assert np.all(np.abs(v_full.values[support] - v_loc.values[support]) <= tau + 1e-12)
    # truncation only removes current
    assert np.all(v_loc.values <= v_full.values + 1e-10)


def test_localized_high_tau_support_is_source(square_instance):
    graph, src = square_instance
    v_full, _ = solve_grounded_emv(graph, src)
    free = np.setdiff1d(np.arange(graph.n), src.mask)
    tau = min(0.999, float(v_full.values[free].max()) + 1e-6)
    v_loc, _ = solve_localized(graph, src, SolverConfig(mode="localized", tau=tau))
    assert np.array_equal(v_loc.support, src.mask)


# -------------------------
# Extension
# -------------------------

def test_extension_single_neighbor():
    """At a sample position the sample itself is skipped."""
    cloud = line_cloud([0.0, 1.0, 3.0])
    graph = build_grounded_graph(cloud, KernelSpec.radial(1.0), 1.0)
    v = VoltageFunction(np.array([1.0, 0.25, 0.0]), SourceRegion(np.array([0.0]), 0.1, np.array([0])))
    assert extend_voltage(graph, v, np.array([[1.0]]))[0] == pytest.approx(1.0)
    assert extend_voltage(graph, v, np.array([[2.0]]))[0] == pytest.approx(0.125)


def test_extension_equal_weights():
    cloud = line_cloud([0.0, 2.0, 3.0])
    graph = build_grounded_graph(cloud, KernelSpec.radial(1.0), 1.0)
    v = VoltageFunction(np.array([1.0, 0.2, 0.4]), SourceRegion(np.array([0.0]), 0.1, np.array([0])))
    assert extend_voltage(graph, v, np.array([[2.5]]))[0] == pytest.approx(0.3)


def test_extension_inside_source_is_one():
    cloud = line_cloud([0.0, 0.5, 1.0])
    graph = build_grounded_graph(cloud, KernelSpec.radial(1.0), 1.0)
    src = select_source(cloud, np.array([0.0]), 0.2)
    v, _ = solve_grounded_emv(graph, src)
    assert extend_voltage(graph, v, np.array([[0.1]]))[0] == 1.0


def test_extension_undefined():
    cloud = line_cloud([0.0, 1.0])
    graph = build_grounded_graph(cloud, KernelSpec.radial(1.0), 1.0)
    v, _ = solve_grounded_emv(graph, select_source(cloud, np.array([0.0]), 0.1))
    with pytest.raises(UndefinedExtensionError) as exc:
        extend_voltage(graph, v, np.array([[5.0], [0.5]]))
    assert exc.value.query_indices == [0]
    out = extend_voltage(graph, v, np.array([[5.0], [0.5]]), strict=False)
    assert math.isnan(out[0]) and np.isfinite(out[1])


def test_extension_dimension_mismatch(two_node):
    graph, src = two_node
    v, _ = solve_grounded_emv(graph, src)
    with pytest.raises(ValidationError):
        extend_voltage(graph, v, np.zeros((1, 2)))
