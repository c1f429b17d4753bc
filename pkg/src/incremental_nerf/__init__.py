"""Incremental radiance-field training that recovers camera parameters."""

from .estimator import IncrementalRadianceField
from .evaluation import (
    Sim3,
    TrajectoryAligner,
    TrajectoryMetrics,
    align_sim3,
    evaluate_trajectory,
    psnr,
    rotation_error,
)
from .exceptions import (
    Degenerate,
    DimensionMismatch,
    Diverged,
    DomainError,
    FormatError,
    IncrementalNerfError,
    NonFiniteGradient,
    NotARotation,
    TooSmall,
)
from .field import FieldConfig, RadianceField, load_checkpoint, save_checkpoint
from .geometry import CameraPose, Intrinsics, axis_angle_to_matrix, matrix_to_axis_angle
from .rendering import SamplingConfig, render_image
from .scheduler import ScheduleConfig, TrainConfig, coarse_to_fine, joint_baseline
from .synthdata import SceneDataset, load_dataset, make_synthetic, open_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "CameraPose",
    "Degenerate",
    "DimensionMismatch",
    "Diverged",
    "DomainError",
    "FieldConfig",
    "FormatError",
    "IncrementalNerfError",
    "IncrementalRadianceField",
    "Intrinsics",
    "NonFiniteGradient",
    "NotARotation",
    "RadianceField",
    "SamplingConfig",
    "ScheduleConfig",
    "SceneDataset",
    "Sim3",
    "TooSmall",
    "TrainConfig",
    "TrajectoryAligner",
    "TrajectoryMetrics",
    "align_sim3",
    "axis_angle_to_matrix",
    "coarse_to_fine",
    "evaluate_trajectory",
    "joint_baseline",
    "load_checkpoint",
    "load_dataset",
    "make_synthetic",
    "matrix_to_axis_angle",
    "open_dataset",
    "psnr",
    "render_image",
    "rotation_error",
    "save_checkpoint",
    "save_dataset",
]
