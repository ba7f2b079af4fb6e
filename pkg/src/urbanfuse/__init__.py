"""Watertight surface reconstruction from fused aerial and street-side point clouds."""

from .blending import BlendParams, blend
from .core import AERIAL, STREET, PointCloud, SensorSet, load_point_cloud, load_sensors
from .delaunay import Tetrahedralization, tetrahedralize, walk
from .fusion import FusionParams, accumulate_votes, extract_surface, fuse
from .mincut import BinaryEnergy, solve
from .pipeline import PipelineConfig, run
from .postprocess import TriangleMesh, load_mesh, save_mesh, validate

__version__ = "0.1.0"

__all__ = [
    "AERIAL", "STREET", "BinaryEnergy", "BlendParams", "FusionParams", "PipelineConfig", "PointCloud",
    "SensorSet", "Tetrahedralization", "TriangleMesh", "accumulate_votes", "blend", "extract_surface",
    "fuse", "load_mesh", "load_point_cloud", "load_sensors", "run", "save_mesh", "solve", "tetrahedralize",
    "validate", "walk",
]
