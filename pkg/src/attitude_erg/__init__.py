"""Explicit reference governor for constrained rigid-body attitude control."""

from .kernels import BACKEND, available_backends

__version__ = "0.1.0"

__all__ = ["BACKEND", "available_backends", "__version__"]
