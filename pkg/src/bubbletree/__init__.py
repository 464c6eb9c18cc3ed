"""Singularity models for harmonic maps into spheres: gluing, verification and flow."""
from .errors import BubbleTreeError
from .grid import Field, GridParams, PolarGrid, make_grid, model_grid
from .model import GluingData, HarmonicMapDescriptor, SingularityModel, assemble, stereographic_descriptor
from .rational import RationalMap

__all__ = ["BubbleTreeError", "Field", "GluingData", "GridParams", "HarmonicMapDescriptor", "PolarGrid",
           "RationalMap", "SingularityModel", "assemble", "make_grid", "model_grid",
           "stereographic_descriptor"]
__version__ = "0.1.0"
