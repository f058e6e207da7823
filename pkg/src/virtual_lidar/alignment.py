"""World -> vehicle -> virtual-lidar transform chain and range gating."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FrameMismatch
from .geometry import RigidTransform, compose, invert, rodrigues

VEHICLE_CATEGORIES = frozenset(
    {"car", "truck", "bus", "van", "trailer", "construction_vehicle", "vehicle"}
)
EGO_CULL_MARGIN = 0.2


@dataclass(frozen=True, eq=False)
class ObjectLabel:
    """Annotated 3D box: centre and axis-angle rotation in its own frame."""

    id: str
    category: str
    size: tuple
    center: tuple
    rotation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        size = tuple(float(v) for v in self.size)
        center = tuple(float(v) for v in self.center)
        rotation = tuple(float(v) for v in self.rotation)
        if len(size) != 3 or min(size) <= 0:
            raise ValueError("size must be three positive lengths")
        if len(center) != 3 or not np.isfinite(center).all():
            raise ValueError("center must be three finite numbers")
        if len(rotation) != 3 or not np.isfinite(rotation).all():
            raise ValueError("rotation must be three finite numbers")
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "rotation", rotation)

    @property
    def is_vehicle(self):
        return self.category.lower() in VEHICLE_CATEGORIES

    @property
    def rotation_matrix(self):
        return rodrigues(self.rotation)

    def corners(self):
        """Eight box corners in the label's frame, shape (8, 3)."""
        half = np.asarray(self.size) / 2
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return (signs * half) @ self.rotation_matrix.T + np.asarray(self.center)


def vehicle_to_world(label):
    """T_wc: the target vehicle's box frame expressed in the world frame."""
    return RigidTransform(rodrigues(label.rotation), label.center, "vehicle", "world")


def world_to_lidar(label, model):
    """T_lw = T_lc . T_cw for a virtual sensor mounted on ``label``."""
    return compose(model.T_lc, invert(vehicle_to_world(label)))


def range_filter(cloud, model, return_mask=False):
    """Keep points with ``r_min <= r <= r_max`` (closed), in order."""
    if cloud.frame != "lidar":
        raise FrameMismatch(f"range_filter needs a lidar-frame cloud, got {cloud.frame}")
    rmin, rmax = model.range
    r = cloud.ranges
    keep = (r >= rmin) & (r <= rmax)
    out = cloud.subset(keep)
    return (out, keep) if return_mask else out


def ego_cull_mask(cloud, label, T_lw, margin=EGO_CULL_MARGIN):
    """True for lidar-frame points inside ``label``'s box grown by ``margin``."""
    if cloud.frame != "lidar":
        raise FrameMismatch(f"ego cull needs a lidar-frame cloud, got {cloud.frame}")
    # lidar -> box frame
    T_cl = compose(invert(vehicle_to_world(label)), invert(T_lw))
    local = T_cl.transform_points(cloud.xyz)
    half = np.asarray(label.size) / 2 + margin
    return (np.abs(local) <= half).all(axis=1)
