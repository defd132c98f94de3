"""Semantic 3D mapping: S-NDT, S-BKI and OS-BKI backends with evaluation tooling."""

from .bki import OsbkiMap, SbkiMap, SparseKernel
from .estimator import SemanticMapper, evaluate_map
from .geometry import CameraIntrinsics, LabeledCloud, Pose, project_frame
from .io import load_map, load_sequence, save_map
from .metrics import EvalReport
from .ndt import NdtMap, OccupancyParams

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "EvalReport",
    "LabeledCloud",
    "NdtMap",
    "OccupancyParams",
    "OsbkiMap",
    "Pose",
    "SbkiMap",
    "SemanticMapper",
    "SparseKernel",
    "evaluate_map",
    "load_map",
    "load_sequence",
    "project_frame",
    "save_map",
]
