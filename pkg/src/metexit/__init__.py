"""Asymptotic analysis of multi-edge-type LDPC ensembles on the BIAWGN channel."""

from ._kernels import BACKEND
from .density import GridSpec, LlrDensity, DEFAULT_GRID
from .ensemble import EnsembleSpec, builtin_ensemble, load_ensemble, parse_ensemble

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "GridSpec",
    "LlrDensity",
    "DEFAULT_GRID",
    "EnsembleSpec",
    "builtin_ensemble",
    "load_ensemble",
    "parse_ensemble",
]
