"""Analytic test scenes and an exact ray-casting reference.

:func:`sample_scene` turns an :class:`AnalyticScene` into a world-frame
cloud with per-point truth tags, using stratified (grid + seeded jitter)
sampling so surface point counts are exact. :func:`oracle_cast` traces the
virtual sensor's rays against the analytic surfaces directly and shares no
code with the resampling path beyond ray enumeration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .alignment import ObjectLabel
from .geometry import PointCloud, invert, rodrigues
from .resample import GROUND, NONGROUND, GeneratedCloud, PlaneModel


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple  # length (x), width (y), height (z) in the box frame
    yaw: float = 0.0

    @property
    def rotation(self):
        return rodrigues([0.0, 0.0, self.yaw])


@dataclass(frozen=True)
class Wall:
    """Vertical rectangle above the segment ``start -> end``."""

    start: tuple
    end: tuple
    base: float = 0.0
    height: float = 3.0


@dataclass
class AnalyticScene:
    ground: PlaneModel = field(default_factory=lambda: PlaneModel(0.0, 0.0, 0.0))
    ground_extent: tuple = (-50.0, 50.0, -50.0, 50.0)  # xmin, xmax, ymin, ymax
    boxes: list = field(default_factory=list)
    walls: list = field(default_factory=list)
    density: float = 100.0
    ground_density: float | None = None
    noise_sigma: float = 0.0
    vehicles: list = field(default_factory=list)  # target poses
    solid_vehicles: bool = False  # also treat vehicle boxes as surfaces

    def __post_init__(self):
        if not self.density > 0:
            raise ValueError("density must be positive")
        if self.ground_density is not None and not self.ground_density > 0:
            raise ValueError("ground_density must be positive")
        for b in self.solid_boxes():
            if min(b.size) <= 0:
                raise ValueError("boxes must have positive size")

    def solid_boxes(self):
        """Occluder boxes, plus the vehicles' boxes when they are solid."""
        out = list(self.boxes)
        for v in self.vehicles if self.solid_vehicles else ():
            yaw = float(v.rotation[2]) if np.allclose(v.rotation[:2], 0) else None
            if yaw is None:
                raise ValueError("vehicle boxes must be yaw-only")
            out.append(Box(v.center, v.size, yaw))
        return out


@dataclass(frozen=True, eq=False)
class SampledScene:
    cloud: PointCloud
    is_ground: np.ndarray
    surface: np.ndarray  # -1 ground, else index into boxes + walls + vehicles


def _grid(n_u, n_v, rng):
    a, b = np.meshgrid(np.arange(n_u), np.arange(n_v), indexing="ij")
    u = (a.ravel() + rng.random(a.size)) / n_u
    v = (b.ravel() + rng.random(b.size)) / n_v
    return u, v


def _face_counts(w, h, density):
    s = np.sqrt(density)
    return max(1, int(round(w * s))), max(1, int(round(h * s)))


def _box_faces(box):
    """(origin, edge_u, edge_v, outward normal) for five faces (no bottom)."""
    l, w, h = (float(x) for x in box.size)
    R = box.rotation
    c = np.asarray(box.center, dtype=np.float64)
    faces = []
    local = [
        ([l / 2, -w / 2, -h / 2], [0, w, 0], [0, 0, h], [1, 0, 0]),
        ([-l / 2, w / 2, -h / 2], [0, -w, 0], [0, 0, h], [-1, 0, 0]),
        ([l / 2, w / 2, -h / 2], [-l, 0, 0], [0, 0, h], [0, 1, 0]),
        ([-l / 2, -w / 2, -h / 2], [l, 0, 0], [0, 0, h], [0, -1, 0]),
        ([-l / 2, -w / 2, h / 2], [l, 0, 0], [0, w, 0], [0, 0, 1]),
    ]
    for o, eu, ev, n in local:
        faces.append((R @ o + c, R @ np.array(eu, float), R @ np.array(ev, float), R @ np.array(n, float)))
    return faces


def _wall_face(wall):
    s = np.array([*wall.start, wall.base], dtype=np.float64)
    e = np.array([*wall.end, wall.base], dtype=np.float64)
    eu = e - s
    ev = np.array([0.0, 0.0, wall.height])
    n = np.cross(eu, ev)
    return s, eu, ev, n / np.linalg.norm(n)


def sample_scene(scene, seed=0):
    """Deterministic stratified sampling of every scene surface."""
    rng = np.random.default_rng(seed)
    pts, tags, inten = [], [], []

    xmin, xmax, ymin, ymax = scene.ground_extent
    gd = scene.ground_density or scene.density
    n_u, n_v = _face_counts(xmax - xmin, ymax - ymin, gd)
    u, v = _grid(n_u, n_v, rng)
    gx = xmin + u * (xmax - xmin)
    gy = ymin + v * (ymax - ymin)
    keep = np.ones(len(gx), dtype=bool)
    for b in scene.solid_boxes():
        # no ground under a box footprint
        R = b.rotation
        dx, dy = gx - b.center[0], gy - b.center[1]
        lx = R[0, 0] * dx + R[1, 0] * dy
        ly = R[0, 1] * dx + R[1, 1] * dy
        keep &= ~((np.abs(lx) <= b.size[0] / 2) & (np.abs(ly) <= b.size[1] / 2))
    g = scene.ground
    gz = g.a * gx + g.b * gy + g.c
    ground_pts = np.column_stack([gx, gy, gz])[keep]
    gn = -g.normal / np.linalg.norm(g.normal)
    ground_pts = ground_pts + rng.normal(0.0, scene.noise_sigma, (len(ground_pts), 1)) * gn if scene.noise_sigma else ground_pts
    pts.append(ground_pts)
    tags.append(np.full(len(ground_pts), -1))
    inten.append(rng.integers(5, 40, len(ground_pts)).astype(np.float64))

    surfaces = [_box_faces(b) for b in scene.boxes]
    surfaces += [[_wall_face(w)] for w in scene.walls]
    surfaces += [_box_faces(b) for b in scene.solid_boxes()[len(scene.boxes):]]
    for sid, faces in enumerate(surfaces):
        for o, eu, ev, n in faces:
            nu, nv = _face_counts(np.linalg.norm(eu), np.linalg.norm(ev), scene.density)
            a, b = _grid(nu, nv, rng)
            p = o + a[:, None] * eu + b[:, None] * ev
            if scene.noise_sigma:
                p = p + rng.normal(0.0, scene.noise_sigma, (len(p), 1)) * n
            pts.append(p)
            tags.append(np.full(len(p), sid))
            inten.append(rng.integers(40, 256, len(p)).astype(np.float64))

    xyz = np.concatenate(pts)
    tag = np.concatenate(tags)
    return SampledScene(PointCloud(xyz, np.concatenate(inten), "world"), tag == -1, tag)


# -- oracle -----------------------------------------------------------------

def _cast_box(o, d, box):
    """Entry distance along rays ``o + t d`` (world) into ``box``; inf on miss."""
    R = box.rotation
    half = np.asarray(box.size, dtype=np.float64) / 2
    lo = (o - np.asarray(box.center)) @ R
    ld = d @ R
    if np.all(np.abs(lo) <= half):
        # the sensor sits inside this box (its own vehicle)
        return np.full(len(d), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - lo) / ld
        t2 = (half - lo) / ld
    tmin = np.where(ld == 0, np.where(np.abs(lo) <= half, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(ld == 0, np.where(np.abs(lo) <= half, np.inf, -np.inf), np.maximum(t1, t2))
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    hit = (near <= far) & (near > 0)
    return np.where(hit, near, np.inf)


def _cast_wall(o, d, wall):
    s, eu, ev, n = _wall_face(wall)
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((s - o) @ n) / denom
        p = o + t[:, None] * d - s
    a = p @ eu / (eu @ eu)
    b = p @ ev / (ev @ ev)
    hit = (np.abs(denom) > 1e-12) & (t > 0) & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
    return np.where(hit, t, np.inf)


def _cast_ground(o, d, plane):
    n = plane.normal
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -(o @ n + plane.c) / denom
    return np.where((np.abs(denom) > 1e-12) & (t > 0), t, np.inf)


def oracle_cast(scene, pose, model):
    """Exact nearest hit per virtual ray.

    ``pose`` is the world-to-lidar transform. Boxes containing the sensor
    are ignored, ranges are gated to the model's ``[r_min, r_max]``.
    """
    T_wl = invert(pose)
    d_l = model.ray_directions.reshape(-1, 3)
    d_w = d_l @ T_wl.R.T
    o_w = T_wl.t
    t_ground = _cast_ground(o_w, d_w, scene.ground)
    t_obj = np.full(len(d_w), np.inf)
    for b in scene.solid_boxes():
        t_obj = np.minimum(t_obj, _cast_box(o_w, d_w, b))
    for w in scene.walls:
        t_obj = np.minimum(t_obj, _cast_wall(o_w, d_w, w))
    t = np.minimum(t_ground, t_obj)
    rmin, rmax = model.range
    keep = np.isfinite(t) & (t >= rmin) & (t <= rmax)
    flat = np.flatnonzero(keep)
    m = model.azimuth_steps
    return GeneratedCloud(
        xyz=t[keep, None] * d_l[keep],
        intensity=np.zeros(len(flat)),
        ray_i=flat % m,
        ray_j=flat // m,
        origin=np.where(t_obj[keep] < t_ground[keep], NONGROUND, GROUND).astype(np.uint8),
    )


def surface_residual(scene, pose, points):
    """Distance from lidar-frame points to the nearest analytic surface."""
    T_wl = invert(pose)
    p = T_wl.transform_points(points)
    g = scene.ground
    best = np.abs(p @ g.normal + g.c) / np.linalg.norm(g.normal)
    for b in scene.solid_boxes():
        local = (p - np.asarray(b.center)) @ b.rotation
        half = np.asarray(b.size) / 2
        q = np.abs(local) - half
        outside = np.linalg.norm(np.maximum(q, 0), axis=1)
        inside = np.minimum(q.max(axis=1), 0)
        best = np.minimum(best, np.abs(outside + inside))
    for w in scene.walls:
        s, eu, ev, _ = _wall_face(w)
        rel = p - s
        a = np.clip(rel @ eu / (eu @ eu), 0, 1)
        b = np.clip(rel @ ev / (ev @ ev), 0, 1)
        best = np.minimum(best, np.linalg.norm(rel - a[:, None] * eu - b[:, None] * ev, axis=1))
    return best


# -- scene files ------------------------------------------------------------

def scene_from_dict(doc):
    from .io import label_from_dict

    g = doc.get("ground", {})
    return AnalyticScene(
        ground=PlaneModel(float(g.get("a", 0.0)), float(g.get("b", 0.0)), float(g.get("c", 0.0))),
        ground_extent=tuple(doc.get("ground_extent", (-50.0, 50.0, -50.0, 50.0))),
        boxes=[Box(tuple(b["center"]), tuple(b["size"]), float(b.get("yaw", 0.0))) for b in doc.get("boxes", [])],
        walls=[
            Wall(tuple(w["start"]), tuple(w["end"]), float(w.get("base", 0.0)), float(w.get("height", 3.0)))
            for w in doc.get("walls", [])
        ],
        density=float(doc.get("density", 100.0)),
        ground_density=doc.get("ground_density"),
        noise_sigma=float(doc.get("noise_sigma", 0.0)),
        vehicles=[label_from_dict(v, f"vehicles[{k}]") for k, v in enumerate(doc.get("vehicles", []))],
        solid_vehicles=bool(doc.get("solid_vehicles", False)),
    )


def load_scene(path):
    with open(path, encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))


def intersection_scene(seed, n_occluders=None, density=300.0, ground_density=4.0, noise_sigma=0.0):
    """Flat crossroads with 2-6 boxes and walls and four target poses.

    Targets sit within 6 m of the centre with random headings; occluders are
    placed 15-40 m out and rejection-sampled so nothing overlaps.
    """
    rng = np.random.default_rng(seed)
    if n_occluders is None:
        n_occluders = int(rng.integers(2, 7))

    def footprint(center, size, yaw):
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s], [s, c]])
        half = np.asarray(size[:2]) / 2
        corners = np.array([[sx, sy] for sx in (-1, 1) for sy in (-1, 1)]) * half
        return corners @ R.T + np.asarray(center[:2])

    def overlaps(poly, others, margin=1.5):
        lo, hi = poly.min(axis=0) - margin, poly.max(axis=0) + margin
        return any(np.all(hi >= o.min(axis=0)) and np.all(o.max(axis=0) >= lo) for o in others)

    vehicles = []
    for q in range(4):
        center = (rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0), 0.8)
        yaw = rng.uniform(-np.pi, np.pi)
        vehicles.append(ObjectLabel(f"car{q}", "car", (4.5, 1.9, 1.6), center, (0.0, 0.0, yaw)))

    # keep every structure clear of the area the targets occupy
    taken = [np.array([[-9.0, -9.0], [9.0, 9.0]])]
    boxes, walls = [], []
    while len(boxes) + len(walls) < n_occluders:
        r = rng.uniform(15.0, 40.0)
        a = rng.uniform(-np.pi, np.pi)
        cx, cy = r * np.cos(a), r * np.sin(a)
        if rng.random() < 0.6:
            size = (rng.uniform(1.0, 5.0), rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0))
            yaw = rng.uniform(-np.pi, np.pi)
            poly = footprint((cx, cy), size, yaw)
            if overlaps(poly, taken):
                continue
            boxes.append(Box((cx, cy, size[2] / 2), size, yaw))
        else:
            length = rng.uniform(6.0, 20.0)
            ang = rng.uniform(-np.pi, np.pi)
            dx, dy = 0.5 * length * np.cos(ang), 0.5 * length * np.sin(ang)
            poly = np.array([[cx - dx, cy - dy], [cx + dx, cy + dy]])
            if overlaps(poly, taken):
                continue
            walls.append(Wall((cx - dx, cy - dy), (cx + dx, cy + dy), 0.0, rng.uniform(2.0, 5.0)))
        taken.append(poly)
    return AnalyticScene(
        ground=PlaneModel(0.0, 0.0, 0.0),
        ground_extent=(-60.0, 60.0, -60.0, 60.0),
        boxes=boxes,
        walls=walls,
        density=density,
        ground_density=ground_density,
        noise_sigma=noise_sigma,
        vehicles=vehicles,
    )
