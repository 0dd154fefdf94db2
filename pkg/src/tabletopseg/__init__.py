"""Post-processing, losses, metrics and synthetic data for center-voting
instance segmentation of unseen tabletop objects."""
from .core import (BACKGROUND, FIRST_OBJECT, TABLE, CameraIntrinsics, OrganizedCloud, SceneSample,
                   backproject, project)
from .imp import MorphParams, process_masks
from .metrics import PrfReport, evaluate, hungarian_match
from .scenegen import NoiseConfig, SceneConfig, apply_noise, generate_scene, ideal_observation
from .voting2d import HoughParams, segment_2d
from .voting3d import GmsParams, cluster_votes

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND", "TABLE", "FIRST_OBJECT", "CameraIntrinsics", "OrganizedCloud", "SceneSample",
    "backproject", "project", "MorphParams", "process_masks", "PrfReport", "evaluate",
    "hungarian_match", "NoiseConfig", "SceneConfig", "apply_noise", "generate_scene",
    "ideal_observation", "HoughParams", "segment_2d", "GmsParams", "cluster_votes",
]
