"""Synthesise vehicle-mounted LiDAR scans from roadside point clouds.

A virtual spinning LiDAR is placed on an annotated vehicle, the roadside
cloud is moved into its frame, split into ground and non-ground points and
resampled along the virtual sensor's exact rays.
"""

from .alignment import ObjectLabel, range_filter, vehicle_to_world, world_to_lidar
from .geometry import (
    PointCloud,
    RigidTransform,
    SphericalCoord,
    apply,
    compose,
    from_spherical,
    inv_rodrigues,
    invert,
    rodrigues,
    to_spherical,
)
from .ground_seg import GroundSplit, PolarGroundSegmenter, SegParams, import_mask, segment
from .labels import BevBox, EgoLabel, bev_iou, map_labels
from .lidar_model import (
    LidarModel,
    RayIndex,
    SectorIndex,
    default_pandar64,
    load_lidar_config,
    sector_of,
)
from .metrics import ClassHistogram, cloud_stats, cosine_similarity, js_distance, normalize
from .pipeline import RunConfig, generate, generate_view
from .resample import (
    GeneratedCloud,
    PlaneModel,
    ResampleParams,
    VirtualLidarResampler,
    bucket_nonground,
    fit_ground_plane,
    fit_local_plane,
    fuse,
    intersect,
    resample_ground,
    resample_nonground,
)

__version__ = "0.1.0"

__all__ = [
    "BevBox",
    "ClassHistogram",
    "EgoLabel",
    "GeneratedCloud",
    "GroundSplit",
    "LidarModel",
    "ObjectLabel",
    "PlaneModel",
    "PointCloud",
    "PolarGroundSegmenter",
    "RayIndex",
    "ResampleParams",
    "RigidTransform",
    "RunConfig",
    "SectorIndex",
    "SegParams",
    "SphericalCoord",
    "VirtualLidarResampler",
    "apply",
    "bev_iou",
    "bucket_nonground",
    "cloud_stats",
    "compose",
    "cosine_similarity",
    "default_pandar64",
    "fit_ground_plane",
    "fit_local_plane",
    "from_spherical",
    "fuse",
    "generate",
    "generate_view",
    "import_mask",
    "intersect",
    "inv_rodrigues",
    "invert",
    "js_distance",
    "load_lidar_config",
    "map_labels",
    "normalize",
    "range_filter",
    "resample_ground",
    "resample_nonground",
    "rodrigues",
    "sector_of",
    "segment",
    "to_spherical",
    "vehicle_to_world",
    "world_to_lidar",
]
