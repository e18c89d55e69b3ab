"""3D pedestrian localization from stereo 2D keypoints.

A numpy library: stereo geometry and error models, a synthetic scene
generator, pair features with augmentation, a small from-scratch network
that predicts distance with a Laplace spread and a stereo-matching score,
inference, metrics, and geometric baselines.
"""

from .errors import DataError, DomainError, NumericError
from .geometry import (
    KITTI_RIG,
    HeightPrior,
    SphericalCoord,
    StereoRig,
    cartesian_to_spherical,
    crossover_distance,
    depth_to_disparity,
    disparity_to_depth,
    monocular_task_error,
    project,
    spherical_to_cartesian,
    stereo_pixel_error,
    task_error_constant,
)
from .inference import Localization, predict_frame, predict_frames
from .nn import Network, NetworkSpec
from .skeleton import JOINT_NAMES, NUM_JOINTS, KeypointSet
from .synth import FrameAnnotation, SceneConfig, SceneInstance, generate_frames, generate_scene
from .training import TrainConfig, load_model, train

__version__ = "0.1.0"
