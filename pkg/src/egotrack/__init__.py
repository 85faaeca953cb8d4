"""3D-aware refinement and evaluation of object tracks in egocentric video."""

from .costs import AttributeVector, CostConfig
from .tracker import Observation, Track, TrackerState, run, step

__version__ = "0.1.0"

__all__ = ["AttributeVector", "CostConfig", "Observation", "Track", "TrackerState", "run", "step"]
