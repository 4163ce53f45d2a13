"""Dense indoor location history from inertial trajectories, sparse noisy
position fixes, and a geo-registered floorplan raster."""

from .geo import (
    FloorplanRaster,
    GeoRegistration,
    PixelClass,
    load_floorplan,
    load_registration,
    pixel_to_world,
    world_to_pixel,
)
from .optimizer import (
    FlpFix,
    OptimizerConfig,
    SolveResult,
    initial_alignment,
    solve,
)
from .pipeline import PipelineConfig, run_pipeline, run_pipeline_in_memory
from .trajectory import (
    CorrectionParams,
    InertialTrajectory,
    PositionSeries,
    integrate,
    interpolate_correction,
    subsample_constraints,
)

__version__ = "0.1.0"

__all__ = [
    "CorrectionParams",
    "FloorplanRaster",
    "FlpFix",
    "GeoRegistration",
    "InertialTrajectory",
    "OptimizerConfig",
    "PipelineConfig",
    "PixelClass",
    "PositionSeries",
    "SolveResult",
    "initial_alignment",
    "integrate",
    "interpolate_correction",
    "load_floorplan",
    "load_registration",
    "pixel_to_world",
    "run_pipeline",
    "run_pipeline_in_memory",
    "solve",
    "subsample_constraints",
    "world_to_pixel",
    "__version__",
]
