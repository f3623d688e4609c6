"""Continuous-spin branching systems on graphs: simulation, coupling and verification."""
from .configuration import Configuration
from .lattice import GraphSpec, WeightSpec

__all__ = ["Configuration", "GraphSpec", "WeightSpec"]
__version__ = "0.1.0"
