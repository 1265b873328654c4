"""Voxel encoding models: Gabor pyramid, ROMP, correlation-loss head, statistics."""

from ._core import *  # noqa: F401,F403
from ._core import DataError, RuntimeFailure, DEFAULT_SEED

__all__ = [name for name in dir() if not name.startswith("_")]
