"""Nonholonomic geometry toolkit: jets, d-metrics, d-connections, generated
solutions, Lagrange geometry, Ricci flows, Clifford structures and Fedosov
quantization."""

from .errors import ConfigError, NholoError
from .fields import Chart, Jet, ScalarField
from .geometry import DMetric, NConnection

__version__ = "0.1.0"

__all__ = ["Chart", "ConfigError", "DMetric", "Jet", "NConnection", "NholoError", "ScalarField", "__version__"]
