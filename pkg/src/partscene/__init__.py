"""Part-level scene reconstruction: primitive fitting, kinematic part trees,
support graphs and URDF export from segmented part point clouds."""

from .errors import PartSceneError
from .pipeline import PipelineConfig, PipelineFailure, evaluate, reconstruct, run_pipeline
from .synthetic import SyntheticSceneSpec, generate_synthetic_scene

__version__ = "0.1.0"

__all__ = [
    "PartSceneError",
    "PipelineConfig",
    "PipelineFailure",
    "SyntheticSceneSpec",
    "evaluate",
    "generate_synthetic_scene",
    "reconstruct",
    "run_pipeline",
]
