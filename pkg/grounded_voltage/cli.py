"""
grounded-voltage command line
-----------------------------
Usage:
  grounded-voltage sample   --manifold interval --lo 0 --hi 3 --n 2048 --seed 7
  grounded-voltage build    --cloud gv_output/cloud.csv --r 0.05 --rho-g 0.05
  grounded-voltage solve    --graph gv_output/graph.csv --cloud gv_output/cloud.csv \\
                            --source-center 2.5 --source-radius 0.5
  grounded-voltage baseline --cloud square.csv --r 0.05 --method region-er \\
                            --source-center 0.1 0.1 --sink-center 0.7 0.7 --source-radius 0.1
  grounded-voltage embed    --cloud sphere.csv --r 0.1 --rho-g 1e-4 --landmarks 5 --project 3
  grounded-voltage analyze  profile|bounds|support|convergence ...
  grounded-voltage repro    fig_er_compare|fig_voltage_grounded|fig_sphere_embedding

Every flag mirrors a RunConfig key (``--tau`` is ``solver.tau``); ``--config``
loads a JSON RunConfig and flags override it.  Outputs land in
``--out`` (default $GV_OUTPUT_DIR) next to a manifest.json.

Exit codes: 0 ok, 1 invalid input or config, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import logging
import pathlib
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from jsonschema import Draft7Validator
from jsonschema.exceptions import ValidationError as JsonSchemaError

from . import storage
from .analysis import (
    convergence_study,
    radial_profile,
    support_radius,
    theoretical_bounds,
)
from .config import (
    ConfigError,
    ConvergenceError,
    GroundedVoltageError,
    NumericalError,
    ValidationError,
    default_log_level,
    default_output_dir,
    default_max_iters,
    default_tol,
)
from .embedding import mds_project, select_landmarks, voltage_embedding
from .er_baselines import make_source_sink, run_baseline
from .graph_construction import GroundedGraph, SourceRegion, build_grounded_graph, select_source
from .manifold_sampling import MANIFOLD_KINDS, KernelSpec, ManifoldSpec, PointCloud, sample_manifold
from .recipes import FIGURES, RECIPES
from .voltage_solver import SOLVER_MODES, SolverConfig, VoltageFunction, solve

logger = logging.getLogger(__name__)

CFG = "cfg:"

_NUM = {"type": ["number", "null"]}
_INT = {"type": ["integer", "null"]}
_STR = {"type": ["string", "null"]}
_NUMS = {"type": ["array", "null"], "items": {"type": "number"}}
_INTS = {"type": ["array", "null"], "items": {"type": "integer"}}


def _section_schema(**props: Any) -> Dict[str, Any]:
    return {"type": ["object", "null"], "properties": props, "additionalProperties": False}


# JSON Schema for RunConfig files; null means "unset"
SCHEMA: Dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n": {"type": ["integer", "null"], "minimum": 1},
        "seed": _INT,
        "rho_g": {"type": ["number", "null"], "minimum": 0},
        "output_dir": _STR,
        "method": _STR,
        "manifold": _section_schema(
            kind={"enum": list(MANIFOLD_KINDS) + [None]}, lo=_NUM, hi=_NUM, dim=_INT, azimuth=_NUMS, radius=_NUM
        ),
        "kernel": _section_schema(kind=_STR, bandwidth=_NUM, cutoff=_NUM),
        "source": _section_schema(center=_NUMS, radius=_NUM, nodes=_INTS),
        "sink": _section_schema(center=_NUMS, radius=_NUM),
        "solver": _section_schema(
            tol=_NUM, max_iters=_INT, mode={"enum": list(SOLVER_MODES) + [None]}, tau=_NUM
        ),
        "landmarks": _section_schema(
            m=_INT, strategy=_STR, radius_s=_NUM, seed=_INT, project=_INT, subset=_STR
        ),
        "analysis": _section_schema(
            n_bins=_INT,
            tau=_NUM,
            n_list=_INTS,
            seeds=_INTS,
            grid_size=_INT,
            max_distance=_NUM,
            samples=_INT,
            t_values=_NUMS,
            source_radius=_NUM,
        ),
        "inputs": _section_schema(cloud=_STR, graph=_STR, voltage=_STR),
    },
}
_VALIDATOR = Draft7Validator(SCHEMA)


# -------------------------
# RunConfig
# -------------------------
def _error_field(error: JsonSchemaError) -> str:
    path = [str(p) for p in error.absolute_path]
    if error.validator == "additionalProperties" and isinstance(error.instance, dict):
        known = error.schema.get("properties", {})
        extra = sorted(str(k) for k in error.instance if k not in known)
        if extra:
            path.append(extra[0])
            return ".".join(path)
    return ".".join(path) or "<root>"


def validate_config(data: Any) -> None:
    """Check ``data`` against SCHEMA; the first error, by path, is raised with its dotted key."""
    errors = sorted(_VALIDATOR.iter_errors(data), key=lambda e: [str(p) for p in e.absolute_path])
    if not errors:
        return
    error = errors[0]
    message = "unknown key" if error.validator == "additionalProperties" else error.message
    raise ConfigError(message, field=_error_field(error))


@dataclass
class RunConfig:
    data: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(cls, path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        data: Dict[str, Any] = storage.read_json(path) if path else {}
        validate_config(data)
        cfg = cls(copy.deepcopy(data))
        for dotted, value in (overrides or {}).items():
            cfg.set(dotted, value)
        validate_config(cfg.data)
        return cfg

    def set(self, dotted: str, value: Any) -> None:
        node = self.data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value

    def get(self, dotted: str, default: Any = None) -> Any:
        node: Any = self.data
        for p in dotted.split("."):
            if not isinstance(node, dict) or node.get(p) is None:
                return default
            node = node[p]
        return node

    def require(self, dotted: str) -> Any:
        value = self.get(dotted)
        if value is None:
            raise ConfigError("required but not set", field=dotted)
        return value

    @property
    def output_dir(self) -> pathlib.Path:
        return pathlib.Path(self.get("output_dir") or default_output_dir())

    def _section(self, name: str, build):
        try:
            return build(self.get(name, {}))
        except ConfigError:
            raise
        except ValidationError as exc:
            raise ConfigError(str(exc), field=f"{name}.{exc.field}" if exc.field else name) from exc
        except KeyError as exc:
            raise ConfigError("required but not set", field=f"{name}.{exc.args[0]}") from exc

    def manifold(self) -> ManifoldSpec:
        self.require("manifold.kind")
        return self._section("manifold", ManifoldSpec.from_dict)

    def kernel(self) -> KernelSpec:
        return self._section("kernel", lambda d: KernelSpec.from_dict({"kind": "radial", **d}))

    def solver(self) -> SolverConfig:
        def build(d: Dict[str, Any]) -> SolverConfig:
            return SolverConfig(
                tol=float(d.get("tol") or default_tol()),
                max_iters=int(d.get("max_iters") or default_max_iters()),
                mode=d.get("mode") or "full_power",
                tau=d.get("tau"),
            ).validate()

        return self._section("solver", build)

    def rho_g(self) -> float:
        rho = float(self.require("rho_g"))
        if rho < 0.0:
            raise ConfigError(f"must be >= 0 (got {rho})", field="rho_g")
        return rho


# -------------------------
# Shared plumbing
# -------------------------
def _flag(p: argparse.ArgumentParser, *names: str, key: str, **kw: Any) -> None:
    p.add_argument(*names, dest=CFG + key, default=None, **kw)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="RunConfig JSON file")
    _flag(p, "--out", key="output_dir", help="output directory (default $GV_OUTPUT_DIR)")


def _manifold_flags(p: argparse.ArgumentParser) -> None:
    _flag(p, "--manifold", key="manifold.kind",
          choices=["interval", "unit_square", "sphere", "sphere_segment", "disk"])
    _flag(p, "--lo", key="manifold.lo", type=float)
    _flag(p, "--hi", key="manifold.hi", type=float)
    _flag(p, "--dim", key="manifold.dim", type=int, help="ambient dimension")
    _flag(p, "--azimuth", key="manifold.azimuth", type=float, nargs=2)
    _flag(p, "--disk-radius", key="manifold.radius", type=float)


def _kernel_flags(p: argparse.ArgumentParser) -> None:
    _flag(p, "--kernel", key="kernel.kind", choices=["radial", "gaussian"])
    _flag(p, "--r", "--bandwidth", key="kernel.bandwidth", type=float)
    _flag(p, "--cutoff", key="kernel.cutoff", type=float)
    _flag(p, "--rho-g", key="rho_g", type=float)


def _solver_flags(p: argparse.ArgumentParser) -> None:
    _flag(p, "--tol", key="solver.tol", type=float)
    _flag(p, "--max-iters", key="solver.max_iters", type=int)
    _flag(p, "--mode", key="solver.mode", choices=["full_power", "localized", "direct_oracle"])
    _flag(p, "--tau", key="solver.tau", type=float)


def _source_flags(p: argparse.ArgumentParser) -> None:
    _flag(p, "--source-center", key="source.center", type=float, nargs="+")
    _flag(p, "--source-radius", key="source.radius", type=float)
    _flag(p, "--source-nodes", key="source.nodes", type=int, nargs="+")


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {k[len(CFG):]: v for k, v in vars(args).items() if k.startswith(CFG) and v is not None}


def _status(ok: bool, message: str) -> None:
    print(f"{'✓' if ok else '✗'} {message}", file=sys.stderr)


def _load_cloud(cfg: RunConfig) -> PointCloud:
    return storage.load_cloud(cfg.require("inputs.cloud"))


def _graph(cfg: RunConfig, cloud: Optional[PointCloud]) -> GroundedGraph:
    """Load ``inputs.graph`` if given, else build from the cloud and kernel."""
    path = cfg.get("inputs.graph")
    if path:
        graph = storage.load_graph(path, cloud)
        if cfg.get("rho_g") is not None:
            graph = graph.with_rho(cfg.rho_g())
        if cfg.get("kernel.bandwidth") is not None:
            graph = replace(graph, kernel=cfg.kernel())
        return graph
    if cloud is None:
        raise ConfigError("need inputs.cloud or inputs.graph", field="inputs.cloud")
    cfg.require("kernel.bandwidth")
    return build_grounded_graph(cloud, cfg.kernel(), cfg.rho_g())


def _source(cfg: RunConfig, cloud: Optional[PointCloud], n: int) -> SourceRegion:
    nodes = cfg.get("source.nodes")
    if nodes:
        mask = np.unique(np.asarray(nodes, dtype=np.int64))
        if mask.min() < 0 or mask.max() >= n:
            raise ConfigError(f"node index out of range for n={n}", field="source.nodes")
        return SourceRegion(center=np.zeros(0), radius_s=0.0, mask=mask)
    if cloud is None:
        raise ConfigError("a source ball needs point positions (inputs.cloud)", field="inputs.cloud")
    return select_source(
        cloud, np.asarray(cfg.require("source.center"), dtype=float), float(cfg.require("source.radius"))
    )


# -------------------------
# Commands
# -------------------------
def cmd_sample(cfg: RunConfig) -> List[pathlib.Path]:
    cloud = sample_manifold(cfg.manifold(), int(cfg.require("n")), int(cfg.get("seed", 0)))
    return storage.save_cloud(cloud, cfg.output_dir / "cloud.csv")


def cmd_build(cfg: RunConfig) -> List[pathlib.Path]:
    cloud = _load_cloud(cfg)
    cfg.require("kernel.bandwidth")
    graph = build_grounded_graph(cloud, cfg.kernel(), cfg.rho_g())
    return storage.save_graph(graph, cfg.output_dir / "graph.csv")


def cmd_solve(cfg: RunConfig) -> List[pathlib.Path]:
    cloud = _load_cloud(cfg) if cfg.get("inputs.cloud") else None
    graph = _graph(cfg, cloud)
    source = _source(cfg, cloud, graph.n)
    v, report = solve(graph, source, cfg.solver())
    out = cfg.output_dir
    files = [storage.save_voltage(v, out / "voltage.csv"), storage.write_json(out / "report.json", report.to_dict())]
    if v.support is not None:
        files.append(storage.save_table(((int(i),) for i in v.support), ("node",), out / "support.csv"))
    if not report.converged:
        # outputs stay on disk for inspection
        raise ConvergenceError(
            f"max_iters={report.iterations} reached before tol; partial voltage in {out}", report.final_residual
        )
    return files


def cmd_baseline(cfg: RunConfig) -> List[pathlib.Path]:
    cloud = _load_cloud(cfg)
    cfg.set("rho_g", 0.0)
    graph = _graph(cfg, cloud)
    radius = float(cfg.require("source.radius"))
    spec = make_source_sink(
        cloud,
        np.asarray(cfg.require("source.center"), dtype=float),
        np.asarray(cfg.require("sink.center"), dtype=float),
        float(cfg.get("sink.radius", radius)),
    )
    v = run_baseline(graph, spec, str(cfg.require("method")), cfg.solver())
    out = cfg.output_dir
    return [storage.save_voltage(v, out / "voltage.csv"), storage.write_json(out / "spec.json", spec.to_dict())]


def cmd_embed(cfg: RunConfig) -> List[pathlib.Path]:
    cloud = _load_cloud(cfg)
    subset = cfg.get("landmarks.subset")
    if subset:
        idx = storage.load_matrix(subset).ravel().astype(np.int64)
        cloud = cloud.subset(idx)
    graph = _graph(cfg, cloud)
    landmarks = select_landmarks(
        cloud,
        int(cfg.require("landmarks.m")),
        cfg.get("landmarks.strategy", "uniform_random"),
        int(cfg.get("landmarks.seed", cfg.get("seed", 0))),
        cfg.get("landmarks.radius_s"),
    )
    emb = voltage_embedding(graph, landmarks, cfg.solver())
    out = cfg.output_dir
    files = [
        storage.save_matrix(emb.Z, out / "embedding.csv"),
        storage.write_json(out / "landmarks.json", landmarks.to_dict()),
    ]
    d = cfg.get("landmarks.project")
    if d:
        proj = mds_project(emb, int(d))
        files.append(storage.save_matrix(proj.coords, out / "projection.csv"))
        files.append(storage.save_matrix(proj.singular_values[None, :], out / "singular_values.csv"))
    return files


def _profile_from_inputs(cfg: RunConfig):
    cloud = _load_cloud(cfg)
    values = storage.load_voltage(cfg.require("inputs.voltage"))
    center = np.asarray(cfg.require("source.center"), dtype=float)
    radius = float(cfg.get("source.radius", 0.0))
    mask = np.flatnonzero(values >= 1.0)
    v = VoltageFunction(values, SourceRegion(center=center, radius_s=radius, mask=mask))
    prof = radial_profile(cloud, v, center, int(cfg.get("analysis.n_bins", 40)), cfg.get("analysis.max_distance"))
    return cloud, prof


def _bounds(cfg: RunConfig):
    return theoretical_bounds(
        float(cfg.require("kernel.bandwidth")),
        cfg.rho_g(),
        cfg.manifold(),
        float(cfg.get("analysis.source_radius", cfg.get("source.radius", cfg.require("kernel.bandwidth")))),
        n_samples=int(cfg.get("analysis.samples", 1_000_000)),
        seed=int(cfg.get("seed", 0)),
    )


def cmd_analyze(cfg: RunConfig, what: str) -> List[pathlib.Path]:
    out = cfg.output_dir
    if what == "profile":
        _, prof = _profile_from_inputs(cfg)
        return [
            storage.save_table(prof.to_rows(), ("lo", "hi", "mean", "count", "stddev"), out / "profile.csv"),
            storage.save_curve(out / "profile.dat", {"z": prof.bin_centers, "mean": prof.bin_mean, "stderr": prof.stderr}),
        ]
    if what == "bounds":
        bounds = _bounds(cfg)
        t = np.asarray(cfg.get("analysis.t_values", [1, 2, 3, 4, 5]), dtype=float)
        return [
            storage.write_json(out / "bounds.json", bounds.to_dict()),
            storage.save_curve(out / "envelopes.dat", {
                "t": t,
                "z_upper": bounds.upper_distance(t),
                "upper": bounds.upper_envelope(t),
                "z_lower": bounds.lower_distance(t),
                "lower": bounds.lower_envelope(t),
            }),
        ]
    if what == "support":
        _, prof = _profile_from_inputs(cfg)
        bounds = _bounds(cfg) if cfg.get("kernel.bandwidth") and cfg.get("manifold.kind") else None
        rep = support_radius(prof, float(cfg.require("analysis.tau")), bounds)
        return [storage.write_json(out / "support.json", dict(rep.to_dict(), within_bounds=rep.within_bounds()))]
    if what == "convergence":
        spec = cfg.manifold()
        grid_size = int(cfg.get("analysis.grid_size", 50))
        if spec.kind != "interval":
            raise ConfigError("convergence grids are built for interval manifolds", field="manifold.kind")
        grid = np.linspace(spec.lo, spec.hi, grid_size)
        cfg.require("kernel.bandwidth")
        rep = convergence_study(
            spec,
            cfg.kernel(),
            cfg.rho_g(),
            np.asarray(cfg.require("source.center"), dtype=float),
            float(cfg.require("source.radius")),
            [int(n) for n in cfg.require("analysis.n_list")],
            grid,
            [int(s) for s in cfg.get("analysis.seeds", [cfg.get("seed", 0)])],
            cfg.solver(),
        )
        files = [
            storage.save_table(
                [(n, s, float(rep.sup_diff[i, k]), float(rep.mean_diff[i, k]))
                 for i, n in enumerate(rep.n_list[:-1]) for k, s in enumerate(rep.seeds)],
                ("n", "seed", "sup_diff", "mean_diff"),
                out / "convergence.csv",
            ),
            storage.write_json(out / "summary.json", rep.to_dict()),
        ]
        for i, n in enumerate(rep.n_list):
            files.append(storage.save_curve(out / f"curve_n{n}.dat", {"x": grid, "v": rep.median_profile(i)}))
        return files
    raise ValidationError(f"unknown analysis {what!r}", field="analysis")


def cmd_repro(cfg: RunConfig, figure: str) -> List[pathlib.Path]:
    out = cfg.output_dir / figure
    summary = RECIPES[figure](out)
    _status(summary["passed"], f"{figure}: {sum(c.get('passed', True) for c in summary['checks'].values())}"
            f"/{len(summary['checks'])} checks passed")
    return [out / name for name in summary["files"]] + [out / "summary.json"]


# -------------------------
# Entry point
# -------------------------
class _Parser(argparse.ArgumentParser):
    """Usage errors become ValidationError so they share exit code 1."""

    def error(self, message: str) -> None:
        raise ValidationError(f"{self.prog}: {message}", field="argv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grounded-voltage", description="Grounded metric graph voltages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a manifold")
    _common(p)
    _manifold_flags(p)
    _flag(p, "--n", key="n", type=int)
    _flag(p, "--seed", key="seed", type=int)

    p = sub.add_parser("build", help="build a grounded graph from a cloud CSV")
    _common(p)
    _flag(p, "--cloud", key="inputs.cloud")
    _kernel_flags(p)

    p = sub.add_parser("solve", help="solve for the grounded voltage")
    _common(p)
    _flag(p, "--cloud", key="inputs.cloud")
    _flag(p, "--graph", key="inputs.graph")
    _kernel_flags(p)
    _solver_flags(p)
    _source_flags(p)

    p = sub.add_parser("baseline", help="ungrounded source/sink baselines")
    _common(p)
    _flag(p, "--cloud", key="inputs.cloud")
    _kernel_flags(p)
    _solver_flags(p)
    _source_flags(p)
    _flag(p, "--sink-center", key="sink.center", type=float, nargs="+")
    _flag(p, "--sink-radius", key="sink.radius", type=float)
    _flag(p, "--method", key="method", choices=["pm", "region-er", "density-er", "er"])

    p = sub.add_parser("embed", help="landmark voltage embedding")
    _common(p)
    _flag(p, "--cloud", key="inputs.cloud")
    _flag(p, "--graph", key="inputs.graph")
    _kernel_flags(p)
    _solver_flags(p)
    _flag(p, "--landmarks", key="landmarks.m", type=int)
    _flag(p, "--strategy", key="landmarks.strategy", choices=["uniform_random", "farthest_point"])
    _flag(p, "--landmark-radius", key="landmarks.radius_s", type=float)
    _flag(p, "--landmark-seed", key="landmarks.seed", type=int)
    _flag(p, "--project", key="landmarks.project", type=int)
    _flag(p, "--subset", key="landmarks.subset", help="CSV of row indices to keep")
    _flag(p, "--seed", key="seed", type=int)

    p = sub.add_parser("analyze", help="profiles, bounds, support radius, convergence")
    p.add_argument("what", choices=["profile", "bounds", "support", "convergence"])
    _common(p)
    _manifold_flags(p)
    _kernel_flags(p)
    _solver_flags(p)
    _source_flags(p)
    _flag(p, "--cloud", key="inputs.cloud")
    _flag(p, "--voltage", key="inputs.voltage")
    _flag(p, "--bins", key="analysis.n_bins", type=int)
    _flag(p, "--max-distance", key="analysis.max_distance", type=float)
    _flag(p, "--support-tau", key="analysis.tau", type=float)
    _flag(p, "--n-list", key="analysis.n_list", type=int, nargs="+")
    _flag(p, "--seeds", key="analysis.seeds", type=int, nargs="+")
    _flag(p, "--grid-size", key="analysis.grid_size", type=int)
    _flag(p, "--samples", key="analysis.samples", type=int)
    _flag(p, "--seed", key="seed", type=int)

    p = sub.add_parser("repro", help="regenerate figure data")
    p.add_argument("figure", choices=list(FIGURES))
    _common(p)
    return parser


def _configure_logging() -> None:
    level = getattr(logging, default_log_level(), logging.INFO)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        cfg = RunConfig.load(args.config, _overrides(args))
        if args.command == "sample":
            files = cmd_sample(cfg)
        elif args.command == "build":
            files = cmd_build(cfg)
        elif args.command == "solve":
            files = cmd_solve(cfg)
        elif args.command == "baseline":
            files = cmd_baseline(cfg)
        elif args.command == "embed":
            files = cmd_embed(cfg)
        elif args.command == "analyze":
            files = cmd_analyze(cfg, args.what)
        else:
            files = cmd_repro(cfg, args.figure)
        command = args.command if args.command not in ("analyze", "repro") else (
            f"{args.command} {getattr(args, 'what', None) or getattr(args, 'figure', '')}"
        )
        out = cfg.output_dir / args.figure if args.command == "repro" else cfg.output_dir
        storage.write_manifest(out, command, cfg.data, files, started, seed=cfg.get("seed"))
    except ValidationError as exc:
        _status(False, str(exc))
        return 1
    except NumericalError as exc:
        _status(False, str(exc))
        return 2
    except GroundedVoltageError as exc:
        _status(False, str(exc))
        return 2
    _status(True, f"{args.command}: wrote {len(files)} file(s) to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
