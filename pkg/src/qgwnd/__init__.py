"""Nonlinear Schrödinger equations with white-noise and random dispersion on quantum graphs."""

from __future__ import annotations

__version__ = "0.1.0"

from .coupling import VertexCoupling, standard_coupling
from .graph import MetricGraph, build_graph, discretize, star
from .propagation import PropagatorContext
from .spectral import assemble, eigendecompose

__all__ = [
    "__version__",
    "MetricGraph",
    "build_graph",
    "discretize",
    "star",
    "VertexCoupling",
    "standard_coupling",
    "assemble",
    "eigendecompose",
    "PropagatorContext",
]
