"""Extremal selections of polytope-valued multimaps and their flows."""
from .geometry import Polytope, caratheodory, chebyshev, contains, hausdorff
from .multimap import Box, SeedSet, VertexMultiMap
from .variance import OUTSIDE, affine_majorant, h_value
from .selection import refine
from .flow import build_extremal, integrate
from .control import ControlSystem, synthesize
from .scenario import benchmark, load

__version__ = "0.1.0"

__all__ = [
    "Polytope", "caratheodory", "chebyshev", "contains", "hausdorff",
    "Box", "SeedSet", "VertexMultiMap",
    "OUTSIDE", "affine_majorant", "h_value",
    "refine", "build_extremal", "integrate",
    "ControlSystem", "synthesize",
    "benchmark", "load",
]
