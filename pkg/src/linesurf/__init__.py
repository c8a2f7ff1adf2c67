"""Watertight piecewise-planar surfaces from 3D line segments."""

__version__ = "0.1.0"

from .geom import Plane, Segment3
from .lineio import LineCloud, ObservedSegment, Viewpoint, synth_cube, synth_room
from .pipeline import PipelineConfig, reconstruct

__all__ = ["Plane", "Segment3", "LineCloud", "ObservedSegment", "Viewpoint", "synth_cube",
           "synth_room", "PipelineConfig", "reconstruct", "__version__"]
