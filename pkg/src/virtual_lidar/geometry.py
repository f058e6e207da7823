"""Point-cloud value types and rigid-body / spherical-coordinate kernels.

Every function here is pure. Arrays stored on the value types are made
read-only so a cloud can be shared between workers without copying.

Conventions
-----------
* Column vectors, left multiplication: ``p' = R @ p + t``.
* ``compose(a, b)`` applies ``b`` first, then ``a``.
* Rotation vectors are axis-angle (direction = axis, norm = angle).
* Spherical triplets are ``(r, phi, theta)`` with ``phi = atan2(y, x)`` and
  ``theta`` the polar angle from ``+z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import FrameMismatch, NonOrthonormalInput

#: Maximum |R^T R - I| and |det R - 1| accepted for a stored transform.
ORTHONORMAL_TOL = 1e-9
#: Looser bound applied to matrices handed to :func:`inv_rodrigues`.
INV_RODRIGUES_TOL = 1e-6
#: Below this angle (rad) Rodrigues switches to its series expansion.
SMALL_ANGLE = 1e-8

FRAMES = ("world", "vehicle", "lidar")

_I3 = np.eye(3)
_I3.setflags(write=False)


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered points with per-point intensity, tagged with a frame.

    Parameters
    ----------
    xyz : array of shape (N, 3)
        Positions in meters.
    intensity : array of shape (N,), optional
        Reflectance in ``[0, 255]``; zeros when omitted.
    frame : str
        One of ``"world"``, ``"vehicle"``, ``"lidar"``.
    """

    xyz: np.ndarray
    intensity: np.ndarray = None
    frame: str = "world"

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64)
        if xyz.size == 0:
            xyz = xyz.reshape(0, 3)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must have shape (N, 3), got {xyz.shape}")
        if self.intensity is None:
            inten = np.zeros(len(xyz))
        else:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if inten.shape != (len(xyz),):
            raise ValueError("intensity length does not match point count")
        if not np.isfinite(xyz).all():
            raise ValueError("point coordinates must be finite")
        if not np.isfinite(inten).all() or (inten < 0).any() or (inten > 255).any():
            raise ValueError("intensity must be finite and within [0, 255]")
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        object.__setattr__(self, "xyz", _frozen(xyz))
        object.__setattr__(self, "intensity", _frozen(inten))

    def __len__(self):
        return len(self.xyz)

    @classmethod
    def empty(cls, frame="world"):
        return cls(np.zeros((0, 3)), np.zeros(0), frame)

    @classmethod
    def from_array(cls, arr, frame="world"):
        """Build from an ``(N, 4)`` array of ``x, y, z, intensity``."""
        arr = np.asarray(arr, dtype=np.float64).reshape(-1, 4)
        return cls(arr[:, :3], arr[:, 3], frame)

    def to_array(self):
        return np.column_stack([self.xyz, self.intensity])

    def subset(self, index):
        """Points selected by a boolean mask or an index array, order kept."""
        return PointCloud(self.xyz[index], self.intensity[index], self.frame)

    def with_frame(self, frame):
        return PointCloud(self.xyz, self.intensity, frame)

    @property
    def ranges(self):
        return np.linalg.norm(self.xyz, axis=1)


class SphericalCoord(NamedTuple):
    r: float
    phi: float
    theta: float


def to_spherical(p):
    """Cartesian ``(..., 3)`` to ``SphericalCoord`` of matching leading shape.

    The origin maps to ``(0, 0, 0)``.
    """
    p = np.asarray(p, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(x, y)
    r = np.hypot(rho, z)
    phi = np.arctan2(y, x)
    # atan2 form of arccos(z / r); better conditioned near the poles
    theta = np.arctan2(rho, z)
    origin = r == 0
    if np.any(origin):
        phi = np.where(origin, 0.0, phi)
        theta = np.where(origin, 0.0, theta)
    # keep phi in (-pi, pi]
    phi = np.where(phi == -np.pi, np.pi, phi)
    if p.ndim == 1:
        return SphericalCoord(float(r), float(phi), float(theta))
    return SphericalCoord(r, phi, theta)


def from_spherical(s):
    r, phi, theta = (np.asarray(v, dtype=np.float64) for v in s)
    sin_t = np.sin(theta)
    out = np.stack([r * sin_t * np.cos(phi), r * sin_t * np.sin(phi), r * np.cos(theta)], axis=-1)
    return out


def skew(v):
    v = np.asarray(v, dtype=np.float64)
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -v[..., 2], v[..., 1]
    K[..., 1, 0], K[..., 1, 2] = v[..., 2], -v[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -v[..., 1], v[..., 0]
    return K


def rodrigues(rvec):
    """Rotation matrix of an axis-angle vector; batched over leading axes."""
    rvec = np.asarray(rvec, dtype=np.float64)
    if rvec.shape == (3,):
        return _rodrigues_one(rvec)
    theta = np.linalg.norm(rvec, axis=-1)[..., None, None]
    K = skew(rvec)
    K2 = K @ K
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * K2


def _rodrigues_one(v):
    theta = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    K = skew(v)
    if theta < SMALL_ANGLE:
        a, b = 1.0 - theta**2 / 6.0, 0.5 - theta**2 / 24.0
    else:
        a, b = math.sin(theta) / theta, (1.0 - math.cos(theta)) / theta**2
    return _I3 + a * K + b * (K @ K)


def check_rotation(R, tol=ORTHONORMAL_TOL):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.isfinite(R).all():
        return False
    if np.abs(R.T @ R - _I3).max() > tol:
        return False
    (a, b, c), (d, e, f), (g, h, i) = R.tolist()
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    return abs(det - 1.0) <= tol


def inv_rodrigues(R, tol=INV_RODRIGUES_TOL):
    """Axis-angle vector with angle in ``[0, pi]`` for a rotation matrix.

    At exactly ``pi`` the axis is chosen with its first nonzero component
    positive.
    """
    R = np.asarray(R, dtype=np.float64)
    if not check_rotation(R, tol):
        raise NonOrthonormalInput("matrix is not a proper rotation")
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    angle = np.arctan2(s, c)
    if angle < SMALL_ANGLE:
        return w
    if c > 0:
        return angle * w / s
    # wide angles: the axis comes from the symmetric part, which stays well
    # conditioned as sin(angle) -> 0
    B = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(B[k, k])
    axis /= np.linalg.norm(axis)
    if s > 1e-12:
        if axis @ w < 0:
            axis = -axis
    else:
        nz = axis[np.abs(axis) > 1e-12]
        if nz.size and nz[0] < 0:
            axis = -axis
    return angle * axis


def rotation_to_euler_zyx(R):
    """``(roll, pitch, yaw)`` for ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    R = np.asarray(R, dtype=np.float64)
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    if abs(np.cos(pitch)) > 1e-9:
        roll = np.arctan2(R[2, 1], R[2, 2])
        yaw = np.arctan2(R[1, 0], R[0, 0])
    else:
        # gimbal lock: fold everything into yaw
        roll = 0.0
        yaw = np.arctan2(-R[0, 1], R[1, 1])
    return np.array([roll, pitch, yaw])


def euler_zyx_to_rotation(roll, pitch, yaw):
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``p' = R p + t``, optionally tagged with source and target frames."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    source: str | None = None
    target: str | None = None
    tol: float = ORTHONORMAL_TOL

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.isfinite(t).all():
            raise ValueError("translation must be a finite 3-vector")
        if not check_rotation(R, self.tol):
            raise NonOrthonormalInput("R is not orthonormal with det 1")
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "t", _frozen(t))

    @classmethod
    def identity(cls, source=None, target=None):
        return cls(np.eye(3), np.zeros(3), source, target)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0), source=None, target=None):
        return cls(rodrigues(rotvec), translation, source, target)

    @classmethod
    def from_matrix(cls, M, source=None, target=None):
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3], source, target)

    @property
    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    @property
    def rotvec(self):
        return inv_rodrigues(self.R)

    def transform_points(self, xyz):
        xyz = np.asarray(xyz, dtype=np.float64)
        return xyz @ self.R.T + self.t

    def __matmul__(self, other):
        return compose(self, other)

    def __repr__(self):
        tag = f" {self.source}->{self.target}" if self.source or self.target else ""
        return f"RigidTransform(rotvec={np.round(self.rotvec, 6).tolist()}, t={self.t.tolist()}{tag})"


def compose(a, b):
    """Transform applying ``b`` first, then ``a``."""
    if a.source is not None and b.target is not None and a.source != b.target:
        raise FrameMismatch(f"cannot chain {b.source}->{b.target} into {a.source}->{a.target}")
    return RigidTransform(a.R @ b.R, a.R @ b.t + a.t, b.source, a.target, min(a.tol, b.tol))


def invert(T):
    Rt = T.R.T
    return RigidTransform(Rt, -Rt @ T.t, T.target, T.source, T.tol)


def apply(T, cloud):
    """Map every point of ``cloud`` through ``T``; intensities and order kept."""
    if T.source is not None and cloud.frame != T.source:
        raise FrameMismatch(f"transform expects a {T.source} cloud, got {cloud.frame}")
    frame = T.target if T.target is not None else cloud.frame
    return PointCloud(T.transform_points(cloud.xyz), cloud.intensity, frame)


def rotation_angle_between(R1, R2):
    """Geodesic angle (rad) between two rotation matrices."""
    # chordal form; arccos of the trace loses half the digits near zero
    chord = np.linalg.norm(np.asarray(R1) - np.asarray(R2)) / (2.0 * np.sqrt(2.0))
    return float(2.0 * np.arcsin(min(chord, 1.0)))
