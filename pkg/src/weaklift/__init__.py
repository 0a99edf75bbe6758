"""Weakly supervised 2d-to-3d human pose lifting with re-projection and symmetry losses."""
from .data import CameraModel, Sample, generate_synthetic, load_poses, save_poses
from .estimator import PoseStandardizer, RootCenterer, WeaklySupervisedLifter
from .exceptions import (CheckpointError, FrameError, NumericalError, PoseFileError, TopologyError,
                         WeakliftError)
from .metrics import EvalReport, auc, evaluate, mpje, pck, pelvis_adjust, retarget
from .pipeline import (ModelBundle, TrainConfig, create_bundle, fit, load_checkpoint, predict,
                       save_checkpoint)
from .skeleton import Pose2D, Pose3D, SkeletonTopology, default_topology, load_topology

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "CheckpointError", "EvalReport", "FrameError", "ModelBundle", "NumericalError",
    "Pose2D", "Pose3D", "PoseFileError", "Sample", "SkeletonTopology", "TopologyError",
    "TrainConfig", "WeakliftError", "auc", "create_bundle", "default_topology", "evaluate", "fit",
    "generate_synthetic", "load_checkpoint", "load_poses", "load_topology", "mpje", "pck",
    "pelvis_adjust", "predict", "retarget", "save_checkpoint", "save_poses",
    "PoseStandardizer", "RootCenterer", "WeaklySupervisedLifter",
]
