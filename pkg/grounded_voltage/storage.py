"""
On-disk formats
---------------
CSV for arrays, JSON for metadata.  Floats are written with 17 significant
digits so every 64-bit value round-trips.  Every writer goes through
``atomic_write`` (temp file in the target directory, then rename).

  cloud      headerless CSV, one row per point      + <name>.json sidecar
  graph      CSV edge list i,j,weight (i < j)        + <name>.json sidecar
  voltage    CSV node,value
  matrix     headerless CSV (embeddings, projections)
  curve      gnuplot .dat, whitespace separated, '#' header
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import pathlib
import platform
import tempfile
import time
from dataclasses import replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import scipy

from . import __version__
from .config import ParseError, ValidationError
from .graph_construction import GroundedGraph
from .manifold_sampling import KernelSpec, ManifoldSpec, PointCloud
from .voltage_solver import VoltageFunction

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]
FLOAT_FMT = "{:.17g}"


def fmt(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def sidecar_path(path: PathLike) -> pathlib.Path:
    p = pathlib.Path(path)
    return p.with_suffix(".json")


# -------------------------
# Atomic writes
# -------------------------
def atomic_write(path: PathLike, text: str) -> pathlib.Path:
    """Write ``text`` to ``path`` via a temp file and rename."""
    target = pathlib.Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent))
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug("wrote %s", target)
    return target


def write_json(path: PathLike, data: Dict[str, Any]) -> pathlib.Path:
    return atomic_write(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def read_json(path: PathLike) -> Dict[str, Any]:
    p = pathlib.Path(path)
    if not p.exists():
        raise ValidationError(f"file not found: {p}", field="path")
    with open(p, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno, str(p)) from exc


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _csv_text(rows: Iterable[Sequence[Any]], header: Optional[Sequence[str]] = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


# -------------------------
# CSV parsing
# -------------------------
def _read_numeric_rows(path: PathLike, expect_cols: Optional[int] = None, skip_header: bool = False):
    p = pathlib.Path(path)
    if not p.exists():
        raise ValidationError(f"file not found: {p}", field="path")
    rows: List[List[float]] = []
    width = expect_cols
    with open(p, "r", newline="", encoding="utf-8") as f:
        for lineno, raw in enumerate(csv.reader(f), start=1):
            if not raw or all(not c.strip() for c in raw):
                continue
            if lineno == 1 and skip_header:
                continue
            try:
                vals = [float(c) for c in raw]
            except ValueError:
                raise ParseError(f"non-numeric field in {raw!r}", lineno, str(p)) from None
            if any(not math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", lineno, str(p))
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(f"expected {width} columns, found {len(vals)}", lineno, str(p))
            rows.append(vals)
    if not rows:
        raise ParseError("no data rows", 1, str(p))
    return np.asarray(rows, dtype=float)


def _has_text_header(path: PathLike) -> bool:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    if not first:
        return False
    try:
        [float(c) for c in first.split(",")]
        return False
    except ValueError:
        return True


# -------------------------
# Point clouds
# -------------------------
def save_cloud(cloud: PointCloud, path: PathLike) -> List[pathlib.Path]:
    csv_path = atomic_write(path, _csv_text(cloud.points.tolist()))
    meta = {"manifold": cloud.manifold.to_dict(), "n": cloud.n, "d": cloud.d, "seed": cloud.seed}
    return [csv_path, write_json(sidecar_path(path), meta)]


def _read_sidecar(side: pathlib.Path, **fields: type) -> Dict[str, Any]:
    """Sidecar JSON with each named key present and coerced to its type."""
    meta = read_json(side)
    if not isinstance(meta, dict):
        raise ValidationError(f"{side}: expected a JSON object", field="sidecar")
    for key, kind in fields.items():
        if meta.get(key) is None:
            raise ValidationError(f"{side}: missing key {key!r}", field=key)
        if kind is dict:
            if not isinstance(meta[key], dict):
                raise ValidationError(f"{side}: {key!r} must be an object", field=key)
            continue
        try:
            meta[key] = kind(meta[key])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{side}: {key!r} is not a valid {kind.__name__}", field=key) from exc
    return meta


def load_cloud(path: PathLike) -> PointCloud:
    side = sidecar_path(path)
    if not side.exists():
        return load_points_csv(path)
    meta = _read_sidecar(side, n=int, d=int, manifold=dict)
    pts = _read_numeric_rows(path, expect_cols=int(meta["d"]))
    if pts.shape[0] != int(meta["n"]):
        raise ValidationError(f"{path}: sidecar says n={meta['n']}, file has {pts.shape[0]} rows", field="n")
    return PointCloud(pts, ManifoldSpec.from_dict(meta["manifold"]), int(meta.get("seed", 0)))


def load_points_csv(path: PathLike) -> PointCloud:
    """Any numeric CSV (optional text header) as an ``external`` point cloud."""
    if not pathlib.Path(path).exists():
        raise ValidationError(f"file not found: {path}", field="path")
    pts = _read_numeric_rows(path, skip_header=_has_text_header(path))
    cloud = PointCloud(pts, ManifoldSpec.external(pts.shape[1]), 0, {"source": str(path)})
    logger.info("loaded %d x %d points from %s", cloud.n, cloud.d, path)
    return cloud


# -------------------------
# Graphs
# -------------------------
def save_graph(graph: GroundedGraph, path: PathLike) -> List[pathlib.Path]:
    i, j, w = graph.edge_list()
    csv_path = atomic_write(path, _csv_text(zip(i.tolist(), j.tolist(), w.tolist())))
    meta = {
        "n": graph.n,
        "rho_g": graph.rho,
        "edge_count": graph.edge_count,
        "kernel": graph.kernel.to_dict() if graph.kernel is not None else None,
    }
    return [csv_path, write_json(sidecar_path(path), meta)]


def load_graph(path: PathLike, cloud: Optional[PointCloud] = None) -> GroundedGraph:
    meta = _read_sidecar(sidecar_path(path), n=int, rho_g=float)
    n = meta["n"]
    p = pathlib.Path(path)
    if not p.exists():
        raise ValidationError(f"file not found: {path}", field="path")
    if p.stat().st_size == 0:
        edges = np.zeros((0, 3))
    else:
        edges = _read_numeric_rows(path, expect_cols=3)
    if np.any(edges[:, :2] != np.round(edges[:, :2])):
        raise ValidationError(f"{path}: node indices must be integers", field="edges")
    graph = GroundedGraph.from_edges(
        n, edges[:, 0].astype(np.int64), edges[:, 1].astype(np.int64), edges[:, 2], float(meta["rho_g"]), cloud
    )
    if meta.get("kernel"):
        graph = replace(graph, kernel=KernelSpec.from_dict(meta["kernel"]))
    return graph


# -------------------------
# Voltages and matrices
# -------------------------
def save_voltage(v: VoltageFunction | np.ndarray, path: PathLike) -> pathlib.Path:
    values = v.values if isinstance(v, VoltageFunction) else np.asarray(v, dtype=float)
    return atomic_write(path, _csv_text(((i, float(x)) for i, x in enumerate(values)), header=("node", "value")))


def load_voltage(path: PathLike) -> np.ndarray:
    rows = _read_numeric_rows(path, expect_cols=2, skip_header=True)
    order = np.argsort(rows[:, 0], kind="stable")
    return rows[order, 1]


def save_matrix(M: np.ndarray, path: PathLike) -> pathlib.Path:
    return atomic_write(path, _csv_text(np.atleast_2d(M).astype(float).tolist()))


def load_matrix(path: PathLike) -> np.ndarray:
    return _read_numeric_rows(path)


def save_table(rows: Iterable[Sequence[Any]], header: Sequence[str], path: PathLike) -> pathlib.Path:
    return atomic_write(path, _csv_text(rows, header=header))


def save_curve(path: PathLike, columns: Dict[str, np.ndarray], comment: str = "") -> pathlib.Path:
    """gnuplot data file: '#'-prefixed header, whitespace-separated columns."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append("# " + " ".join(names))
    for row in data:
        lines.append(" ".join("nan" if not math.isfinite(x) else fmt(x) for x in row))
    return atomic_write(path, "\n".join(lines) + "\n")


# -------------------------
# Manifests
# -------------------------
def _versions() -> Dict[str, str]:
    return {
        "grounded_voltage": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_manifest(
    out_dir: PathLike,
    command: str,
    config: Dict[str, Any],
    files: Sequence[PathLike],
    started: float,
    seed: Optional[int] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> pathlib.Path:
    """manifest.json: enough to rerun the command and get identical CSVs."""
    out = pathlib.Path(out_dir)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": _versions(),
        "wall_time": time.perf_counter() - started,
        "files": sorted(
            str(pathlib.Path(f).relative_to(out)) if pathlib.Path(f).is_relative_to(out) else str(f)
            for f in files
        ),
    }
    if extra:
        manifest.update(extra)
    return write_json(out / "manifest.json", manifest)
