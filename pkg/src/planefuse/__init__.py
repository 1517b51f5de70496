"""Plane-segment registration of laser and vision point clouds and map-based localization."""

from .config import Config, load_config, parse_config
from .geometry import PlanarSegment, PointCloud, Pose, RigidTransform, Trajectory
from .localization import GlobalMap, initial_pose_search, initialize, track_step
from .registration import MatchParams, register, register_segments
from .segmentation import SegmentationParams, segment_planes

__version__ = "0.1.0"
