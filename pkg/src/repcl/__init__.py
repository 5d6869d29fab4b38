"""Replay-based class-incremental text classification at desk scale."""

from . import _determinism  # noqa: F401  (must run before numpy-heavy imports)

__version__ = "0.1.0"
