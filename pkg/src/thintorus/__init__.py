"""Random walks, cover times and lamplighter mixing on thin tori Z_n^2 x Z_h."""

from .lattice import Graph, RadiiSchedule, Region, TorusSpec, build_torus, cycle, torus

__all__ = ["Graph", "RadiiSchedule", "Region", "TorusSpec", "build_torus", "cycle", "torus"]
__version__ = "0.1.0"
