#!/usr/bin/env python3
"""
grounded-voltage setup check
Verifies dependencies, environment settings and the solver's closed-form fixtures.
Exit status 0 when every check passes.
"""

import os
import sys
import tempfile
from pathlib import Path

import numpy as np

DEPENDENCIES = ("numpy", "scipy.sparse", "scipy.spatial", "dotenv", "jsonschema", "grounded_voltage.cli")

# (name, n, edge heads, edge tails, weights, rho, expected voltage with node 0 as source)
FIXTURES = (
    ("two-node", 2, [0], [1], [0.5], 1.0, [1.0, 1.0 / 3.0]),
    ("path", 3, [0, 1], [1, 2], [0.5, 0.5], 1.0, [1.0, 4.0 / 19.0, 1.0 / 19.0]),
)


def section(title):
    print(f"\n[{title}]")


def line(ok, text):
    print(f"  {'✓' if ok else '✗'} {text}")
    return ok


def check_dependencies():
    section("dependencies")
    ok = True
    for module in DEPENDENCIES:
        try:
            __import__(module)
            line(True, module)
        except ImportError as e:
            ok = line(False, f"{module}: {e}") and ok
    return ok


def check_environment():
    section("environment")
    from grounded_voltage.config import default_output_dir, default_tol, direct_max_n, max_workers

    if not Path(".env").exists():
        print("  no .env; defaults apply (see .env.example)")
    print(f"  GV_OUTPUT_DIR={default_output_dir()} GV_TOL={default_tol():g} "
          f"GV_DIRECT_MAX_N={direct_max_n()} GV_MAX_WORKERS={max_workers()}")

    out = Path(default_output_dir())
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out):
            pass
    except OSError as e:
        return line(False, f"{out} is not writable ({e}); point GV_OUTPUT_DIR elsewhere")
    return line(True, f"{out} is writable")


def check_fixtures():
    section("closed-form voltages")
    from grounded_voltage.graph_construction import GroundedGraph, SourceRegion
    from grounded_voltage.voltage_solver import SolverConfig, solve_direct_oracle, solve_grounded_emv

    ok = True
    source = SourceRegion(center=np.zeros(0), radius_s=0.0, mask=np.array([0]))
    for name, n, heads, tails, w, rho, expected in FIXTURES:
        try:
            graph = GroundedGraph.from_edges(n, np.array(heads), np.array(tails), np.array(w), rho)
            v, report = solve_grounded_emv(graph, source, SolverConfig(tol=1e-14))
            direct = solve_direct_oracle(graph, source)
        except Exception as e:
            ok = line(False, f"{name}: {e}") and ok
            continue
        err = max(np.max(np.abs(v.values - expected)), np.max(np.abs(direct.values - expected)))
        ok = line(err < 1e-12, f"{name}: error {err:.1e}, {report.iterations} power iteration(s)") and ok
    return ok


def main():
    print("grounded-voltage setup check")
    results = {"dependencies": check_dependencies()}
    if results["dependencies"]:
        results["environment"] = check_environment()
        results["fixtures"] = check_fixtures()

    section("result")
    for name, ok in results.items():
        line(ok, name)
    if all(results.values()):
        print("\nall checks passed")
        return 0
    print(f"\nsome checks failed (python {sys.version.split()[0]}, cwd {os.getcwd()})")
    return 1


if __name__ == "__main__":
    sys.exit(main())
