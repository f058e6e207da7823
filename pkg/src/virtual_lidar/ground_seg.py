"""Ground / non-ground decomposition of a sensor-frame cloud.

:class:`PolarGroundSegmenter` splits the xy plane into concentric rings of
azimuth patches, fits a plane to the lowest points of each patch by PCA and
labels points near a sufficiently horizontal patch plane as ground, unless
they sit at the foot of a vertical structure. It is a
deliberately small stand-in for a full-featured segmenter; results from an
external tool can be brought in with :func:`import_mask`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import EmptyCloud, LengthMismatch
from .geometry import PointCloud

LPR_POINTS = 20
SEED_REFINE_ITERS = 3


@dataclass(frozen=True)
class SegParams:
    ring_radii: tuple = (10.0, 25.0, 50.0, 100.0)
    azimuth_bins: tuple = (16, 32, 54, 32)
    seed_height_band: float = 0.4
    plane_dist_threshold: float = 0.15
    normal_z_min: float = float(np.cos(np.deg2rad(15.0)))
    min_patch_points: int = 10
    # a near-plane point with a clearly elevated point this close is the
    # foot of a vertical structure, not ground
    vertical_check_radius: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "ring_radii", tuple(float(r) for r in self.ring_radii))
        object.__setattr__(self, "azimuth_bins", tuple(int(b) for b in self.azimuth_bins))
        if len(self.ring_radii) != len(self.azimuth_bins) or not self.ring_radii:
            raise ValueError("ring_radii and azimuth_bins must have the same nonzero length")
        if any(b <= a for a, b in zip(self.ring_radii, self.ring_radii[1:])) or self.ring_radii[0] <= 0:
            raise ValueError("ring_radii must be positive and increasing")
        if min(self.azimuth_bins) < 1:
            raise ValueError("azimuth_bins must be positive")
        if self.seed_height_band <= 0 or self.plane_dist_threshold <= 0 or self.min_patch_points < 1:
            raise ValueError("segmentation parameters must be positive")
        if self.vertical_check_radius < 0:
            raise ValueError("vertical_check_radius must be nonnegative")
        if not 0 < self.normal_z_min <= 1:
            raise ValueError("normal_z_min must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class GroundSplit:
    """Exact partition of a cloud; index arrays refer to the input order."""

    ground: PointCloud
    nonground: PointCloud
    ground_index: np.ndarray
    nonground_index: np.ndarray

    @property
    def mask(self):
        m = np.zeros(len(self.ground) + len(self.nonground), dtype=bool)
        m[self.ground_index] = True
        return m


def _split(cloud, mask):
    idx = np.arange(len(cloud))
    return GroundSplit(cloud.subset(mask), cloud.subset(~mask), idx[mask], idx[~mask])


def _pca_plane(pts):
    """Unit normal (n_z >= 0) and offset d with n.p + d = 0."""
    mean = pts.mean(axis=0)
    cov = np.cov((pts - mean).T, bias=True)
    _, vecs = np.linalg.eigh(cov)
    n = vecs[:, 0]
    if n[2] < 0:
        n = -n
    return n, -float(n @ mean)


def _tall_columns(xyz, cell, band):
    """True for points whose xy cell spans more than ``band`` in height."""
    if cell <= 0 or len(xyz) == 0:
        return np.zeros(len(xyz), dtype=bool)
    ij = np.floor(xyz[:, :2] / cell).astype(np.int64)
    _, col = np.unique(ij, axis=0, return_inverse=True)
    col = col.ravel()
    top = np.full(col.max() + 1, -np.inf)
    low = np.full(col.max() + 1, np.inf)
    np.maximum.at(top, col, xyz[:, 2])
    np.minimum.at(low, col, xyz[:, 2])
    return (top - low)[col] > band


class PolarGroundSegmenter(BaseEstimator):
    """Concentric-zone patch-plane ground segmenter.

    Parameters mirror :class:`SegParams`. ``fit`` estimates one plane per
    polar patch; ``predict`` returns a boolean ground mask.

    Attributes
    ----------
    patch_planes_ : ndarray of shape (n_patches, 4)
        ``(n_x, n_y, n_z, d)`` per patch, NaN where no plane is available.
    patch_fitted_ : ndarray of bool
        Patches whose plane came from their own points (not inherited).
    """

    def __init__(
        self,
        ring_radii=(10.0, 25.0, 50.0, 100.0),
        azimuth_bins=(16, 32, 54, 32),
        seed_height_band=0.4,
        plane_dist_threshold=0.15,
        normal_z_min=float(np.cos(np.deg2rad(15.0))),
        min_patch_points=10,
        vertical_check_radius=0.3,
    ):
        self.ring_radii = ring_radii
        self.azimuth_bins = azimuth_bins
        self.seed_height_band = seed_height_band
        self.plane_dist_threshold = plane_dist_threshold
        self.normal_z_min = normal_z_min
        self.min_patch_points = min_patch_points
        self.vertical_check_radius = vertical_check_radius

    @classmethod
    def from_params(cls, params):
        return cls(**asdict(params))

    def _params(self):
        return SegParams(**self.get_params())

    def _patch_ids(self, xyz, p):
        rho = np.hypot(xyz[:, 0], xyz[:, 1])
        ring = np.minimum(np.searchsorted(p.ring_radii, rho, side="right"), len(p.ring_radii) - 1)
        bins = np.asarray(p.azimuth_bins)
        offsets = np.concatenate([[0], np.cumsum(bins)])
        az = np.mod(np.arctan2(xyz[:, 1], xyz[:, 0]), 2 * np.pi)
        sector = np.minimum((az / (2 * np.pi) * bins[ring]).astype(np.int64), bins[ring] - 1)
        return offsets[ring] + sector

    def _fit_patch(self, pts, p, tall=None):
        # points under a vertical structure never seed the plane
        if tall is not None and not tall.all():
            pts = pts[~tall]
        z = pts[:, 2]
        lpr = np.sort(z)[: min(LPR_POINTS, len(z))].mean()
        seeds = pts[z < lpr + p.seed_height_band]
        if len(seeds) < 3:
            return None
        n, d = _pca_plane(seeds)
        # refine against the seed band only; the plane must not depend on
        # plane_dist_threshold or the ground set stops being monotone in it
        for _ in range(SEED_REFINE_ITERS):
            near = pts[np.abs(pts @ n + d) < p.seed_height_band / 2]
            if len(near) < 3:
                break
            n, d = _pca_plane(near)
        if n[2] < p.normal_z_min:
            return None
        return np.array([*n, d])

    def fit(self, X, y=None):
        p = self._params()
        X = check_array(X, ensure_min_samples=0)
        if len(X) == 0:
            raise EmptyCloud("cannot segment an empty cloud")
        xyz = X[:, :3]
        bins = np.asarray(p.azimuth_bins)
        offsets = np.concatenate([[0], np.cumsum(bins)])
        n_patches = int(offsets[-1])
        pid = self._patch_ids(xyz, p)
        tall = _tall_columns(xyz, p.vertical_check_radius, p.seed_height_band)
        order = np.argsort(pid, kind="stable")
        bounds = np.searchsorted(pid[order], np.arange(n_patches + 1))

        planes = np.full((n_patches, 4), np.nan)
        fitted = np.zeros(n_patches, dtype=bool)
        for q in range(n_patches):
            members = order[bounds[q] : bounds[q + 1]]
            if len(members) < p.min_patch_points:
                continue
            plane = self._fit_patch(xyz[members], p, tall[members])
            if plane is not None:
                planes[q] = plane
                fitted[q] = True

        # the innermost ring has nothing inside it, so its sparse patches
        # fall back to one plane over the whole ring
        inner_members = order[bounds[0] : bounds[bins[0]]]
        if not fitted[: bins[0]].all() and len(inner_members) >= p.min_patch_points:
            plane = self._fit_patch(xyz[inner_members], p, tall[inner_members])
            if plane is not None:
                planes[: bins[0]][~fitted[: bins[0]]] = plane

        # patches without a usable plane borrow from the nearest inner ring
        for ring in range(1, len(bins)):
            for s in range(bins[ring]):
                q = offsets[ring] + s
                if fitted[q]:
                    continue
                centre = (s + 0.5) / bins[ring]
                for inner in range(ring - 1, -1, -1):
                    src = offsets[inner] + int(centre * bins[inner])
                    if not np.isnan(planes[src, 0]):
                        planes[q] = planes[src]
                        break

        self.patch_planes_ = planes
        self.patch_fitted_ = fitted
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "patch_planes_")
        p = self._params()
        X = check_array(X, ensure_min_samples=0)
        xyz = X[:, :3]
        planes = self.patch_planes_[self._patch_ids(xyz, p)]
        height = np.nan_to_num(np.einsum("ij,ij->i", xyz, planes[:, :3]) + planes[:, 3], nan=np.inf)
        ground = np.abs(height) <= p.plane_dist_threshold
        elevated = height > p.plane_dist_threshold
        if p.vertical_check_radius > 0 and ground.any() and elevated.any():
            cand = np.flatnonzero(ground)
            dist, _ = cKDTree(xyz[elevated]).query(xyz[cand], distance_upper_bound=p.vertical_check_radius)
            ground[cand[dist <= p.vertical_check_radius]] = False
        return ground

    def fit_predict(self, X, y=None):
        return self.fit(X).predict(X)


def segment(cloud, params=None):
    """Split a range-filtered lidar-frame cloud into ground and non-ground."""
    params = params or SegParams()
    if len(cloud) == 0:
        raise EmptyCloud("cannot segment an empty cloud")
    mask = PolarGroundSegmenter.from_params(params).fit_predict(cloud.xyz)
    return _split(cloud, mask)


def import_mask(cloud, mask):
    """Split by an externally computed per-point ground mask."""
    mask = np.asarray(mask)
    if mask.shape != (len(cloud),):
        raise LengthMismatch(f"mask has {mask.size} entries for {len(cloud)} points")
    return _split(cloud, mask.astype(bool))
