"""Ray-cast resampling of a sensor-frame scene onto the virtual LiDAR's rays.

Non-ground points are bucketed by the ray whose angular bin holds them. For
each bucket a local plane is fitted around the bucket's nearest point and
intersected with the bucket's exact ray. Ground is modelled by one global
plane, intersected with every ray that neither produced a non-ground return
nor shares an occlusion sector with one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DegenerateGround, DuplicateRay
from .geometry import PointCloud, to_spherical
from .lidar_model import SECTOR_SHAPE, RayIndex, default_pandar64

NONGROUND, GROUND = 0, 1


@dataclass(frozen=True)
class ResampleParams:
    neighborhood_radius: float = 1.0
    min_fit_points: int = 3
    parallel_eps: float = 1e-6
    cond_max: float = 1e8
    # |n_z| below this switches the local fit to an x- or y-explicit form
    wall_normal_z: float = 0.05
    sector_shape: tuple = SECTOR_SHAPE

    def __post_init__(self):
        if not self.neighborhood_radius > 0:
            raise ValueError("neighborhood_radius must be positive")
        if self.min_fit_points < 3:
            raise ValueError("min_fit_points must be at least 3")
        if len(self.sector_shape) != 2 or min(self.sector_shape) < 1:
            raise ValueError("sector_shape must be two positive integers")
        object.__setattr__(self, "sector_shape", tuple(int(s) for s in self.sector_shape))


@dataclass(frozen=True)
class PlaneModel:
    """Plane ``w = a*u + b*v + c`` where ``w`` is coordinate ``axis``.

    With the default ``axis=2`` this is ``z = a*x + b*y + c`` and the
    (unnormalised) normal is ``(a, b, -1)``.
    """

    a: float
    b: float
    c: float
    axis: int = 2

    @property
    def free_axes(self):
        return tuple(k for k in range(3) if k != self.axis)

    @property
    def normal(self):
        n = np.empty(3)
        u, v = self.free_axes
        n[u], n[v], n[self.axis] = self.a, self.b, -1.0
        return n

    def residual(self, xyz):
        xyz = np.atleast_2d(xyz)
        return xyz @ self.normal + self.c


def intersect(plane, ray_dir, parallel_eps=1e-6):
    """``(t0, point)`` where the ray from the origin meets ``plane``, else None."""
    d = np.asarray(ray_dir, dtype=np.float64)
    nd = float(plane.normal @ d)
    if abs(nd) < parallel_eps:
        return None
    t0 = -plane.c / nd
    if not t0 > 0:
        return None
    return t0, t0 * d


# -- least squares ----------------------------------------------------------

def _moments(xyz, groups, n_groups, anchors):
    """Per-group count, first and second moments of ``xyz - anchors[group]``."""
    q = xyz - anchors[groups]
    n = np.bincount(groups, minlength=n_groups).astype(np.float64)
    S1 = np.stack([np.bincount(groups, q[:, a], n_groups) for a in range(3)], axis=-1)
    S2 = np.empty((n_groups, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            S2[:, a, b] = S2[:, b, a] = np.bincount(groups, q[:, a] * q[:, b], n_groups)
    return n, S1, S2


def _choose_axes(n, S1, S2, wall_normal_z):
    """Explicit axis per group from the principal normal of its points."""
    safe = np.maximum(n, 1.0)[:, None]
    mean = S1 / safe
    cov = S2 / safe[..., None] - mean[:, :, None] * mean[:, None, :]
    _, vecs = np.linalg.eigh(cov)
    normal = np.abs(vecs[:, :, 0])
    axis = np.full(len(n), 2)
    wall = normal[:, 2] < wall_normal_z
    axis[wall] = np.where(normal[wall, 0] >= normal[wall, 1], 0, 1)
    return axis


_FREE = np.array([[1, 2], [0, 2], [0, 1]])


def _solve_planes(n, S1, S2, anchors, axis, cond_max):
    """Least-squares ``(a, b, c)`` per group; ``ok`` False where ill-posed."""
    u, v = _FREE[axis, 0], _FREE[axis, 1]
    rows = np.arange(len(n))
    A = np.empty((len(n), 3, 3))
    A[:, 0, 0] = S2[rows, u, u]
    A[:, 0, 1] = A[:, 1, 0] = S2[rows, u, v]
    A[:, 1, 1] = S2[rows, v, v]
    A[:, 0, 2] = A[:, 2, 0] = S1[rows, u]
    A[:, 1, 2] = A[:, 2, 1] = S1[rows, v]
    A[:, 2, 2] = n
    rhs = np.stack([S2[rows, u, axis], S2[rows, v, axis], S1[rows, axis]], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(A) if len(n) else np.zeros(0)
    ok = np.isfinite(cond) & (cond < cond_max)
    coef = np.full((len(n), 3), np.nan)
    if ok.any():
        coef[ok] = np.linalg.solve(A[ok], rhs[ok][..., None])[..., 0]
    # back from anchor-centred coordinates
    o = anchors
    a, b = coef[:, 0], coef[:, 1]
    c = coef[:, 2] + o[rows, axis] - a * o[rows, u] - b * o[rows, v]
    return np.stack([a, b, c], axis=-1), ok


def fit_plane(points, cond_max=1e8, axis=2):
    """Least-squares plane through ``points``; None when ill-conditioned."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        return None
    anchor = pts.mean(axis=0)[None]
    n, S1, S2 = _moments(pts, np.zeros(len(pts), dtype=np.int64), 1, anchor)
    coef, ok = _solve_planes(n, S1, S2, anchor, np.array([axis]), cond_max)
    if not ok[0]:
        return None
    return PlaneModel(*map(float, coef[0]), axis=axis)


# -- buckets ----------------------------------------------------------------

@dataclass(frozen=True)
class RayBucket:
    ray: RayIndex
    members: np.ndarray  # indices into the non-ground cloud, nearest first


@dataclass(frozen=True, eq=False)
class RayBuckets:
    """Non-ground points grouped by ray, in ray-id order.

    ``order[bounds[g]:bounds[g+1]]`` are the members of bucket ``g`` sorted
    by range, so ``order[bounds[:-1]]`` are the per-bucket nearest points.
    """

    ray_i: np.ndarray
    ray_j: np.ndarray
    order: np.ndarray
    bounds: np.ndarray
    dropped: int

    def __len__(self):
        return len(self.ray_i)

    def __iter__(self):
        for g in range(len(self)):
            yield self[g]

    def __getitem__(self, g):
        return RayBucket(
            RayIndex(int(self.ray_i[g]), int(self.ray_j[g])),
            self.order[self.bounds[g] : self.bounds[g + 1]],
        )

    @property
    def nearest(self):
        return self.order[self.bounds[:-1]]


def bucket_nonground(nonground, model):
    """Group points by the ray whose angular bin holds them."""
    sph = to_spherical(nonground.xyz.reshape(-1, 3))
    i, j = model.bin_rays(sph.r, sph.phi, sph.theta)
    inside = np.flatnonzero(i >= 0)
    rid = model.ray_ids(i[inside], j[inside])
    order = inside[np.lexsort((inside, sph.r[inside], rid))]
    rid_sorted = model.ray_ids(i[order], j[order])
    starts = np.flatnonzero(np.r_[True, rid_sorted[1:] != rid_sorted[:-1]]) if len(order) else np.zeros(0, int)
    bounds = np.r_[starts, len(order)].astype(np.int64)
    return RayBuckets(
        ray_i=i[order[starts]],
        ray_j=j[order[starts]],
        order=order,
        bounds=bounds,
        dropped=int(len(nonground) - len(inside)),
    )


_NEIGHBOUR_CELLS = np.array([(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)])


def ball_moments(xyz, anchors, radius):
    """Count, first and second moments of ``p - anchor`` over the points ``p``
    strictly closer than ``radius`` to each anchor.

    Points are hashed into cubic cells of edge ``radius``; anchors sharing a
    cell share the 27-cell candidate set, so each cell costs one membership
    test and one matrix product.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 3)
    B = len(anchors)
    n = np.zeros(B)
    S1 = np.zeros((B, 3))
    S2 = np.zeros((B, 3, 3))
    if B == 0 or len(xyz) == 0:
        return n, S1, S2

    origin = np.minimum(xyz.min(axis=0), anchors.min(axis=0))
    pc = np.floor((xyz - origin) / radius).astype(np.int64) + 1
    ac = np.floor((anchors - origin) / radius).astype(np.int64) + 1
    dims = np.maximum(pc.max(axis=0), ac.max(axis=0)) + 2
    stride = np.array([dims[1] * dims[2], dims[2], 1])
    pkey = pc @ stride
    order = np.argsort(pkey, kind="stable")
    sorted_keys = pkey[order]

    akey = ac @ stride
    cells, first, inverse = np.unique(akey, return_index=True, return_inverse=True)
    nkeys = cells[:, None] + _NEIGHBOUR_CELLS @ stride
    lo = np.searchsorted(sorted_keys, nkeys, side="left")
    hi = np.searchsorted(sorted_keys, nkeys, side="right")
    by_cell = np.argsort(inverse, kind="stable")
    cell_bounds = np.searchsorted(inverse[by_cell], np.arange(len(cells) + 1))
    r2 = radius * radius
    iu = np.triu_indices(3)

    for q in range(len(cells)):
        idx = np.concatenate([order[a:b] for a, b in zip(lo[q], hi[q]) if b > a] or [np.zeros(0, np.int64)])
        if len(idx) == 0:
            continue
        members = by_cell[cell_bounds[q] : cell_bounds[q + 1]]
        c0 = (ac[first[q]] - 0.5) * radius + origin
        P = xyz[idx] - c0
        A = anchors[members] - c0
        diff = P[None, :, :] - A[:, None, :]
        W = (np.einsum("akx,akx->ak", diff, diff) < r2).astype(np.float64)
        F = np.column_stack([np.ones(len(P)), P, P[:, iu[0]] * P[:, iu[1]]])
        M = W @ F
        cnt, s1 = M[:, 0], M[:, 1:4]
        s2 = np.empty((len(members), 3, 3))
        s2[:, iu[0], iu[1]] = M[:, 4:]
        s2[:, iu[1], iu[0]] = M[:, 4:]
        # about the cell centre -> about each anchor
        n[members] = cnt
        S1[members] = s1 - cnt[:, None] * A
        S2[members] = (
            s2
            - A[:, :, None] * s1[:, None, :]
            - s1[:, :, None] * A[:, None, :]
            + cnt[:, None, None] * A[:, :, None] * A[:, None, :]
        )
    return n, S1, S2


def fit_local_plane(bucket, all_nonground, params=None):
    """Plane through the non-ground points within ``sigma`` of the bucket's
    nearest member, or None when there are too few or they are degenerate."""
    params = params or ResampleParams()
    xyz = all_nonground.xyz
    anchor = xyz[bucket.members[:1]]
    n, S1, S2 = ball_moments(xyz, anchor, params.neighborhood_radius)
    if n[0] < params.min_fit_points:
        return None
    axis = _choose_axes(n, S1, S2, params.wall_normal_z)
    coef, ok = _solve_planes(n, S1, S2, anchor, axis, params.cond_max)
    if not ok[0]:
        return None
    return PlaneModel(*map(float, coef[0]), axis=int(axis[0]))


# -- generated clouds -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeneratedCloud:
    """Synthesised returns with their ray and origin (0 non-ground, 1 ground)."""

    xyz: np.ndarray
    intensity: np.ndarray
    ray_i: np.ndarray
    ray_j: np.ndarray
    origin: np.ndarray
    fallback: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fallback is None:
            object.__setattr__(self, "fallback", np.zeros(len(self.xyz), dtype=bool))

    def __len__(self):
        return len(self.xyz)

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(np.zeros((0, 3)), np.zeros(0), z, z, np.zeros(0, dtype=np.uint8))

    def ray_ids(self, model):
        return model.ray_ids(self.ray_i, self.ray_j)

    def to_cloud(self):
        return PointCloud(self.xyz, self.intensity, "lidar")

    def to_array(self):
        return np.column_stack([self.xyz, self.intensity])


@dataclass(frozen=True, eq=False)
class NonGroundResult:
    cloud: GeneratedCloud
    occupied_rays: np.ndarray  # bool, (beam_count, azimuth_steps)
    blocked_sectors: np.ndarray  # bool, sector grid


def _sector_grid(model, shape):
    bu, bv = shape
    return (-(-model.beam_count // bu), -(-model.azimuth_steps // bv))


def resample_nonground(nonground, model, params=None):
    params = params or ResampleParams()
    k, m = model.beam_count, model.azimuth_steps
    occupied = np.zeros((k, m), dtype=bool)
    blocked = np.zeros(_sector_grid(model, params.sector_shape), dtype=bool)
    buckets = bucket_nonground(nonground, model)
    diag = {
        "nonground_points": len(nonground),
        "out_of_fov": buckets.dropped,
        "buckets": len(buckets),
        "degenerate_buckets": 0,
        "invalid_intersections": 0,
        "out_of_range": 0,
    }
    if len(buckets) == 0:
        return NonGroundResult(GeneratedCloud.empty(), occupied, blocked), diag

    xyz = nonground.xyz
    pmin_idx = buckets.nearest
    anchors = xyz[pmin_idx]
    B = len(buckets)
    n, S1, S2 = ball_moments(xyz, anchors, params.neighborhood_radius)
    axis = _choose_axes(n, S1, S2, params.wall_normal_z)
    coef, ok = _solve_planes(n, S1, S2, anchors, axis, params.cond_max)
    ok &= n >= params.min_fit_points

    d = model.ray_directions[buckets.ray_j, buckets.ray_i]
    rows = np.arange(B)
    normal = np.empty((B, 3))
    normal[rows, _FREE[axis, 0]] = coef[:, 0]
    normal[rows, _FREE[axis, 1]] = coef[:, 1]
    normal[rows, axis] = -1.0
    nd = np.einsum("ij,ij->i", normal, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = -coef[:, 2] / nd
    hit = ok & (np.abs(nd) >= params.parallel_eps) & (t0 > 0)
    # degenerate neighbourhoods keep the nearest point's range on the exact ray
    fallback = ~ok
    t = np.where(fallback, np.linalg.norm(anchors, axis=1), t0)
    rmin, rmax = model.range
    in_range = (t >= rmin) & (t <= rmax)
    keep = (hit | fallback) & in_range

    diag["degenerate_buckets"] = int(fallback.sum())
    diag["invalid_intersections"] = int((ok & ~hit).sum())
    diag["out_of_range"] = int(((hit | fallback) & ~in_range).sum())

    ri, rj = buckets.ray_i[keep], buckets.ray_j[keep]
    out = GeneratedCloud(
        xyz=t[keep, None] * d[keep],
        intensity=nonground.intensity[pmin_idx[keep]],
        ray_i=ri,
        ray_j=rj,
        origin=np.full(int(keep.sum()), NONGROUND, dtype=np.uint8),
        fallback=fallback[keep],
    )
    occupied[rj, ri] = True
    bu, bv = params.sector_shape
    blocked[rj // bu, ri // bv] = True
    diag["nonground_returns"] = len(out)
    diag["blocked_sectors"] = int(blocked.sum())
    return NonGroundResult(out, occupied, blocked), diag


def fit_ground_plane(ground, cond_max=1e8):
    """Single least-squares plane ``z = a x + b y + c`` over all ground points."""
    xyz = ground.xyz if isinstance(ground, PointCloud) else np.asarray(ground).reshape(-1, 3)
    plane = fit_plane(xyz, cond_max=cond_max) if len(xyz) >= 3 else None
    if plane is None:
        raise DegenerateGround(f"cannot fit a ground plane to {len(xyz)} points")
    return plane


def resample_ground(plane, model, blocked_sectors, occupied_rays, params=None, ground=None):
    """Intersect every free, unoccluded ray with the ground plane.

    Intensity is copied from the original ground point nearest each hit.
    """
    params = params or ResampleParams()
    d = model.ray_directions
    k, m = model.beam_count, model.azimuth_steps
    bu, bv = params.sector_shape
    jj, ii = np.meshgrid(np.arange(k), np.arange(m), indexing="ij")
    blocked = np.asarray(blocked_sectors)[jj // bu, ii // bv]
    free = ~blocked & ~np.asarray(occupied_rays, dtype=bool)
    nd = d @ plane.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = -plane.c / nd
    rmin, rmax = model.range
    keep = free & (np.abs(nd) >= params.parallel_eps) & (t0 > 0) & (t0 >= rmin) & (t0 <= rmax)
    rj, ri = np.nonzero(keep)
    xyz = t0[rj, ri, None] * d[rj, ri]
    if ground is not None and len(ground):
        _, nearest = cKDTree(ground.xyz).query(xyz)
        intensity = ground.intensity[nearest] if len(xyz) else np.zeros(0)
    else:
        intensity = np.zeros(len(xyz))
    return GeneratedCloud(
        xyz=xyz,
        intensity=intensity,
        ray_i=ri,
        ray_j=rj,
        origin=np.full(len(xyz), GROUND, dtype=np.uint8),
        diagnostics={
            "blocked_rays": int((blocked & ~np.asarray(occupied_rays, dtype=bool)).sum()),
            "ground_returns": len(xyz),
        },
    )


def fuse(vn, vg):
    """Concatenate non-ground and ground returns; each ray may appear once."""
    ri = np.concatenate([vn.ray_i, vg.ray_i]).astype(np.int64)
    rj = np.concatenate([vn.ray_j, vg.ray_j]).astype(np.int64)
    key = rj * (int(ri.max(initial=0)) + 1) + ri
    if len(np.unique(key)) != len(key):
        raise DuplicateRay("a ray carries both a ground and a non-ground return")
    return GeneratedCloud(
        xyz=np.concatenate([vn.xyz, vg.xyz]).reshape(-1, 3),
        intensity=np.concatenate([vn.intensity, vg.intensity]),
        ray_i=ri,
        ray_j=rj,
        origin=np.concatenate([vn.origin, vg.origin]).astype(np.uint8),
        fallback=np.concatenate([vn.fallback, vg.fallback]),
        diagnostics={**vn.diagnostics, **vg.diagnostics},
    )


def resample_split(split, model, params=None):
    """Full resampling of a :class:`~virtual_lidar.ground_seg.GroundSplit`."""
    params = params or ResampleParams()
    ng, diag = resample_nonground(split.nonground, model, params)
    plane = fit_ground_plane(split.ground, params.cond_max)
    vg = resample_ground(plane, model, ng.blocked_sectors, ng.occupied_rays, params, split.ground)
    fused = fuse(ng.cloud, vg)
    diag.update(vg.diagnostics)
    diag["ground_points"] = len(split.ground)
    diag["generated_points"] = len(fused)
    return GeneratedCloud(
        fused.xyz, fused.intensity, fused.ray_i, fused.ray_j, fused.origin, fused.fallback, diag
    ), plane


class VirtualLidarResampler(BaseEstimator):
    """Estimator wrapper around the resampling stages.

    ``fit(X, y)`` takes sensor-frame points ``(N, 3)`` or ``(N, 4)`` (with
    intensity) and an optional boolean ground mask ``y``; without ``y`` the
    ``segmenter`` (default :class:`PolarGroundSegmenter`) labels the ground.
    ``fit_resample`` returns the generated ``(M, 4)`` points and their
    ground flags, in the style of imbalanced-learn samplers.
    """

    def __init__(
        self,
        lidar_model=None,
        neighborhood_radius=1.0,
        min_fit_points=3,
        parallel_eps=1e-6,
        segmenter=None,
    ):
        self.lidar_model = lidar_model
        self.neighborhood_radius = neighborhood_radius
        self.min_fit_points = min_fit_points
        self.parallel_eps = parallel_eps
        self.segmenter = segmenter

    def fit(self, X, y=None):
        from sklearn.base import clone

        from .ground_seg import PolarGroundSegmenter, import_mask

        X = check_array(X)
        if X.shape[1] not in (3, 4):
            raise ValueError("X must have 3 (xyz) or 4 (xyz + intensity) columns")
        intensity = X[:, 3] if X.shape[1] == 4 else None
        cloud = PointCloud(X[:, :3], intensity, "lidar")
        if y is None:
            seg = clone(self.segmenter) if self.segmenter is not None else PolarGroundSegmenter()
            y = seg.fit_predict(X[:, :3])
        split = import_mask(cloud, np.asarray(y, dtype=bool))
        model = self.lidar_model if self.lidar_model is not None else default_pandar64()
        params = ResampleParams(self.neighborhood_radius, self.min_fit_points, self.parallel_eps)
        self.generated_, self.ground_plane_ = resample_split(split, model, params)
        self.diagnostics_ = dict(self.generated_.diagnostics)
        self.n_features_in_ = X.shape[1]
        return self

    def resample(self):
        check_is_fitted(self, "generated_")
        return self.generated_

    def fit_resample(self, X, y=None):
        g = self.fit(X, y).generated_
        return g.to_array(), g.origin == GROUND
