"""
Tests for the figure data recipes (shrunk sizes)
"""

import json

import pytest

from grounded_voltage import cli, recipes


def _summary(out):
    return json.loads((out / "summary.json").read_text())


# -------------------------
# Recipe outputs
# -------------------------

def test_recipe_registry_matches_cli():
    assert set(recipes.RECIPES) == set(recipes.FIGURES)
    parser = cli.build_parser()
    args = parser.parse_args(["repro", "fig_er_compare"])
    assert args.figure == "fig_er_compare"


def test_er_compare_small(tmp_path):
    out = tmp_path / "er"
    summary = recipes.fig_er_compare(out, n_list=(256, 512), r=0.2, grid_size=8)
    assert summary["figure"] == "fig_er_compare"
    assert set(summary["checks"]) == {"point_er_support_shrinks", "region_er_stabilizes", "pm_stabilizes"}
    # two sizes are not enough to judge stabilization, and an unjudged check fails
    pm = summary["checks"]["pm_stabilizes"]
    assert pm["skipped"] and not pm["passed"]
    assert summary["passed"] is False
    for method in recipes.ER_METHODS:
        assert (out / f"er_{method}_n256.dat").exists()
    assert _summary(out)["files"] == summary["files"]


def test_voltage_grounded_small(tmp_path):
    out = tmp_path / "vg"
    summary = recipes.fig_voltage_grounded(
        out, n_list=(256, 512, 1024), seeds=(0, 1), r=0.1, grid_size=10, n_bins=8
    )
    checks = summary["checks"]
    assert {"line_rho_large_convergence", "line_rho_small_convergence",
            "line_large_rho_decays_faster", "square_diagonal_monotone"} <= set(checks)
    assert checks["line_large_rho_decays_faster"]["passed"]
    assert (out / "line_rho_small_n1024.dat").exists()
    assert (out / "line_rho_large_convergence.csv").exists()
    assert (out / "square_diagonal_n512.dat").exists()
    assert summary["parameters"]["n_list"] == [256, 512, 1024]


@pytest.mark.slow
def test_sphere_embedding_small(tmp_path):
    out = tmp_path / "sphere"
    summary = recipes.fig_sphere_embedding(
        out, n=2048, m_values=(3, 4), seeds=(0, 1), r=0.2, injectivity_pairs=2000
    )
    assert set(summary["checks"]) == {"quality_non_increasing", "quality_informative", "sphere_basis_injective"}
    assert summary["checks"]["quality_non_increasing"]["passed"]
    assert (out / "segment_embedding_m3.dat").exists()
    inj = json.loads((out / "injectivity.json").read_text())
    assert inj["pairs_tested"] > 0


def test_repro_through_cli(tmp_path, monkeypatch):
    calls = {}

    def fake(out_dir):
        calls["out"] = out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "a.dat").write_text("# x\n1\n")
        (out_dir / "summary.json").write_text("{}")
        return {"checks": {"c": {"passed": True}}, "passed": True, "files": ["a.dat"]}

    monkeypatch.setitem(recipes.RECIPES, "fig_er_compare", fake)
    assert cli.main(["repro", "fig_er_compare", "--out", str(tmp_path)]) == 0
    assert calls["out"] == tmp_path / "fig_er_compare"
    manifest = json.loads((tmp_path / "fig_er_compare" / "manifest.json").read_text())
    assert manifest["command"] == "repro fig_er_compare"
    assert sorted(manifest["files"]) == ["a.dat", "summary.json"]


# -------------------------
# Published sizes
# -------------------------

@pytest.mark.slow
def test_er_compare_published_sizes(tmp_path):
    summary = recipes.fig_er_compare(tmp_path / "er")
    assert summary["parameters"]["n_list"] == [2**11, 2**13, 2**15]
    checks = summary["checks"]
    assert not any("skipped" in c for c in checks.values())
    assert len(checks["pm_stabilizes"]["sup_diff"]) == 2
    assert checks["point_er_support_shrinks"]["passed"]


@pytest.mark.slow
def test_sphere_embedding_published_sizes(tmp_path):
    """n = 2^13, m in {3, 5, 7, 9}, five seeds."""
    out = tmp_path / "sphere"
    summary = recipes.fig_sphere_embedding(out)
    assert summary["parameters"]["n"] == 2**13
    assert summary["parameters"]["m_values"] == [3, 5, 7, 9]
    assert summary["parameters"]["seeds"] == [0, 1, 2, 3, 4]
    med = summary["checks"]["quality_non_increasing"]["median_error"]
    assert summary["checks"]["quality_non_increasing"]["passed"]
    assert all(b <= a + 1e-12 for a, b in zip(med[:-1], med[1:]))
    assert summary["checks"]["quality_informative"]["passed"]
    quality = json.loads((out / "quality.json").read_text())
    assert len(quality["errors"]) == 5
