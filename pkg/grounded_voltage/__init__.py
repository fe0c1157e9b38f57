"""
grounded-voltage
----------------
Grounded energy-minimizing voltages on kernel graphs built from manifold
samples, with ungrounded baselines, landmark embeddings and the decay /
support / convergence analyses that go with them.
"""

from .config import (
    ConfigError,
    ConvergenceError,
    EmptySourceError,
    GroundedVoltageError,
    IllPosedError,
    NumericalError,
    ParseError,
    SizeLimitError,
    UndefinedExtensionError,
    ValidationError,
)
from .embedding import (
    LandmarkSet,
    affine_align,
    check_injectivity,
    embedding_quality_study,
    mds_project,
    procrustes_align,
    select_landmarks,
    voltage_embedding,
)
from .er_baselines import SourceSinkSpec, effective_resistance, make_source_sink, run_baseline
from .graph_construction import GroundedGraph, SourceRegion, build_grounded_graph, select_source
from .manifold_sampling import KernelSpec, ManifoldSpec, PointCloud, sample_manifold
from .voltage_solver import SolverConfig, SolveReport, VoltageFunction, extend_voltage, solve

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "EmptySourceError",
    "GroundedGraph",
    "GroundedVoltageError",
    "IllPosedError",
    "KernelSpec",
    "LandmarkSet",
    "ManifoldSpec",
    "NumericalError",
    "ParseError",
    "PointCloud",
    "SizeLimitError",
    "SolveReport",
    "SolverConfig",
    "SourceRegion",
    "SourceSinkSpec",
    "UndefinedExtensionError",
    "ValidationError",
    "VoltageFunction",
    "affine_align",
    "build_grounded_graph",
    "check_injectivity",
    "effective_resistance",
    "embedding_quality_study",
    "extend_voltage",
    "make_source_sink",
    "mds_project",
    "procrustes_align",
    "run_baseline",
    "sample_manifold",
    "select_landmarks",
    "select_source",
    "solve",
    "voltage_embedding",
]
