"""
Configuration and error types for grounded-voltage
---------------------------------------------------
Everything that reads the environment goes through the helpers below, and
every failure the package raises derives from ``GroundedVoltageError``.

Environment Variables:
  GV_OUTPUT_DIR=./gv_output   # default output directory for CLI commands
  GV_LOG_LEVEL=INFO           # logging level used by the CLI
  GV_MAX_WORKERS=8            # thread fan-out for landmarks / (n, seed) cells
  GV_PARALLEL=true            # set false to force serial execution
  GV_TOL=1e-10                # default l-infinity stopping tolerance
  GV_MAX_ITERS=1000000        # default iteration cap
  GV_DIRECT_MAX_N=5000        # size cap of the direct linear-solve oracle
"""

from __future__ import annotations

import os
from typing import Optional, Sequence

from dotenv import load_dotenv

# Load environment variables
load_dotenv(".env")


# -------------------------
# Env helpers
# -------------------------
def _flag(name: str, default: str = "false") -> bool:
    """Check if an environment variable is set to true."""
    return (os.getenv(name, default) or "").strip().lower() in {"1", "true", "yes", "on"}


def _env(key: str, default: str | None = None) -> str | None:
    """Get environment variable with default."""
    return os.getenv(key, default)


def default_output_dir() -> str:
    return _env("GV_OUTPUT_DIR", "./gv_output") or "./gv_output"


def default_log_level() -> str:
    return (_env("GV_LOG_LEVEL", "INFO") or "INFO").strip().upper()


def default_tol() -> float:
    return float(_env("GV_TOL", "1e-10") or "1e-10")


def default_max_iters() -> int:
    return int(float(_env("GV_MAX_ITERS", "1000000") or "1000000"))


def direct_max_n() -> int:
    return int(_env("GV_DIRECT_MAX_N", "5000") or "5000")


def max_workers() -> int:
    """Thread count for fan-out; 1 when GV_PARALLEL is off."""
    if not _flag("GV_PARALLEL", "true"):
        return 1
    raw = _env("GV_MAX_WORKERS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


# -------------------------
# Errors
# -------------------------
class GroundedVoltageError(RuntimeError):
    """Base class for every failure raised by the package."""


class ValidationError(GroundedVoltageError, ValueError):
    """Invalid input: a spec, a parameter, a file. ``field`` names the culprit."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class ConfigError(ValidationError):
    """RunConfig schema violation; ``field`` is the dotted path."""

    def __str__(self) -> str:
        base = super().__str__()
        return f"{self.field}: {base}" if self.field else base


class ParseError(ValidationError):
    """Malformed CSV input; ``line`` is 1-based."""

    def __init__(self, message: str, line: int, path: Optional[str] = None):
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {message}", field="line")
        self.line = line
        self.path = path


class NumericalError(GroundedVoltageError):
    """A computation could not produce a trustworthy number."""


class EmptySourceError(NumericalError):
    """Source region contains no sampled node."""


class IllPosedError(NumericalError):
    """No ground and some component cannot reach the source."""


class SizeLimitError(NumericalError):
    """Problem too large for the direct oracle."""


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class UndefinedExtensionError(NumericalError):
    """Extension queried where the kernel has no mass (0/0)."""

    def __init__(self, message: str, query_indices: Sequence[int]):
        super().__init__(message)
        self.query_indices = list(query_indices)
