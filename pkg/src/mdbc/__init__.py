"""Martingale-posterior uncertainty quantification for density-based clustering."""

__version__ = "0.1.0"

from .backend import HAVE_KERNELS

__all__ = ["HAVE_KERNELS", "__version__"]
