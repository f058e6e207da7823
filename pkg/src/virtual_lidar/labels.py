"""Re-expressing annotations in the virtual sensor frame; rotated BEV IoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import ObjectLabel
from .geometry import inv_rodrigues, rodrigues


@dataclass(frozen=True, eq=False)
class EgoLabel(ObjectLabel):
    """Label in the lidar frame; ``ego`` marks the sensor-carrying vehicle."""

    ego: bool = False


def map_labels(labels, T_lw, ego_id=None):
    """Move label centres and orientations through ``T_lw``.

    Category, size and id are copied unchanged.
    """
    out = []
    for lab in labels:
        center = T_lw.R @ np.asarray(lab.center) + T_lw.t
        rotation = inv_rodrigues(T_lw.R @ rodrigues(lab.rotation))
        out.append(
            EgoLabel(
                lab.id,
                lab.category,
                lab.size,
                tuple(center),
                tuple(rotation),
                ego=ego_id is not None and lab.id == str(ego_id),
            )
        )
    return out


@dataclass(frozen=True)
class BevBox:
    center: tuple
    half_extents: tuple
    yaw: float = 0.0

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise ValueError("box extents must be positive")

    @classmethod
    def from_label(cls, label):
        R = rodrigues(label.rotation)
        yaw = float(np.arctan2(R[1, 0], R[0, 0]))
        return cls(tuple(label.center[:2]), (label.size[0] / 2, label.size[1] / 2), yaw)

    def corners(self):
        """Counter-clockwise corners, shape (4, 2)."""
        hx, hy = self.half_extents
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
        return local @ np.array([[c, s], [-s, c]]) + np.asarray(self.center)

    @property
    def area(self):
        return 4.0 * self.half_extents[0] * self.half_extents[1]


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject, clip):
    """Sutherland-Hodgman: ``subject`` clipped to the convex CCW ``clip``."""
    out = [np.asarray(p, dtype=np.float64) for p in subject]
    for k in range(len(clip)):
        a, b = clip[k], clip[(k + 1) % len(clip)]
        edge = b - a

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        src, out = out, []
        for q in range(len(src)):
            cur, nxt = src[q], src[(q + 1) % len(src)]
            sc, sn = side(cur), side(nxt)
            if sc >= 0:
                out.append(cur)
            if (sc >= 0) != (sn >= 0):
                out.append(cur + (nxt - cur) * (sc / (sc - sn)))
        if not out:
            break
    return np.array(out).reshape(-1, 2)


def bev_iou(a, b):
    """Intersection over union of two rotated rectangles."""
    inter = _polygon_area(clip_convex(a.corners(), b.corners()))
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))
