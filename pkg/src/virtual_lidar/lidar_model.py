"""Virtual spinning LiDAR: beam table, ray enumeration, angular binning, sectors."""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, IndexOutOfRange
from .geometry import RigidTransform, SphericalCoord, invert

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

#: Angular slack (rad) so points lying exactly on a ray bin to that ray.
ANGLE_TOL = 1e-10
#: Rays per occlusion sector: (beams, azimuth steps).
SECTOR_SHAPE = (2, 25)
DEFAULT_MOUNT_HEIGHT = 0.25


class RayIndex(NamedTuple):
    i: int  # azimuth step
    j: int  # beam


class SectorIndex(NamedTuple):
    u: int  # beam group
    v: int  # azimuth group


def pandar64_elevation_table():
    """Synthetic 64-beam table, roughly twice as dense between -6 and 2 deg.

    Not the factory calibration (which is unpublished); lower and upper
    bands are evenly spread and stop short of the FOV limits so that every
    beam owns a non-empty bin.
    """
    low = np.linspace(-24.6, -6.4, 24)
    mid = np.linspace(-6.0, 2.0, 21)
    high = np.linspace(2.7, 14.7, 19)
    return tuple(float(e) for e in np.round(np.concatenate([low, mid, high]), 6))


def uniform_elevation_table(beam_count, vertical_fov=(-25.0, 15.0)):
    """Evenly spaced beams at the centres of ``beam_count`` equal slices."""
    lo, hi = vertical_fov
    step = (hi - lo) / beam_count
    return tuple(float(lo + (q + 0.5) * step) for q in range(beam_count))


def default_mount():
    return RigidTransform(np.eye(3), [0.0, 0.0, DEFAULT_MOUNT_HEIGHT], "lidar", "vehicle")


@dataclass(frozen=True, eq=False)
class LidarModel:
    """Immutable description of a virtual spinning LiDAR.

    ``mount`` is the sensor pose in the vehicle frame (it maps lidar
    coordinates to vehicle coordinates); the vehicle-to-lidar extrinsic is
    :attr:`T_lc`.
    """

    vertical_fov: tuple = (-25.0, 15.0)
    horizontal_fov: float = 360.0
    elevation_table: tuple = field(default_factory=pandar64_elevation_table)
    azimuth_resolution: float = 0.2
    range: tuple = (0.5, 200.0)
    mount: RigidTransform = field(default_factory=default_mount)

    def __post_init__(self):
        lo, hi = (float(v) for v in self.vertical_fov)
        table = tuple(float(e) for e in self.elevation_table)
        rmin, rmax = (float(v) for v in self.range)
        object.__setattr__(self, "vertical_fov", (lo, hi))
        object.__setattr__(self, "elevation_table", table)
        object.__setattr__(self, "range", (rmin, rmax))
        if not lo < hi:
            raise ValueError("vertical_fov must be increasing")
        if not table:
            raise ValueError("elevation_table is empty")
        if any(b <= a for a, b in zip(table, table[1:])):
            raise ValueError("elevation_table must be strictly ascending")
        if table[0] < lo or table[-1] > hi:
            raise ValueError("elevation_table entries must lie inside vertical_fov")
        if not self.azimuth_resolution > 0:
            raise ValueError("azimuth_resolution must be positive")
        if not 0 < self.horizontal_fov <= 360:
            raise ValueError("horizontal_fov must be in (0, 360]")
        ratio = self.horizontal_fov / self.azimuth_resolution
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError("horizontal_fov / azimuth_resolution must be a positive integer")
        if not 0 <= rmin < rmax:
            raise ValueError("range must satisfy 0 <= r_min < r_max")

    @property
    def beam_count(self):
        return len(self.elevation_table)

    @property
    def azimuth_steps(self):
        return int(round(self.horizontal_fov / self.azimuth_resolution))

    @property
    def ray_count(self):
        return self.beam_count * self.azimuth_steps

    @property
    def sector_grid(self):
        bu, bv = SECTOR_SHAPE
        return (-(-self.beam_count // bu), -(-self.azimuth_steps // bv))

    @property
    def full_circle(self):
        return abs(self.horizontal_fov - 360.0) < 1e-9

    @property
    def T_lc(self):
        """Vehicle-frame to lidar-frame transform."""
        return invert(self.mount)

    @cached_property
    def polar_angles(self):
        """Polar angle (rad) per beam, ``pi/2 - elevation``."""
        return np.pi / 2 - np.deg2rad(np.asarray(self.elevation_table))

    @cached_property
    def azimuths(self):
        return np.arange(self.azimuth_steps) * np.deg2rad(self.azimuth_resolution)

    @cached_property
    def _theta_bounds(self):
        # ascending polar-angle bin edges; outer edges are the FOV limits
        lo, hi = np.deg2rad(self.vertical_fov)
        inner = np.sort(self.polar_angles)[1:]
        return np.concatenate([[np.pi / 2 - hi], inner, [np.pi / 2 - lo]])

    @cached_property
    def ray_directions(self):
        """Unit ray directions, shape ``(beam_count, azimuth_steps, 3)``."""
        th = self.polar_angles[:, None]
        ph = self.azimuths[None, :]
        st = np.sin(th)
        d = np.stack(
            np.broadcast_arrays(st * np.cos(ph), st * np.sin(ph), np.cos(th)), axis=-1
        )
        d.setflags(write=False)
        return d

    def ray_direction(self, idx):
        i, j = idx
        if not (0 <= i < self.azimuth_steps and 0 <= j < self.beam_count):
            raise IndexOutOfRange(f"ray {tuple(idx)} outside {self.azimuth_steps}x{self.beam_count}")
        return self.ray_directions[j, i].copy()

    def bin_rays(self, r, phi, theta):
        """Vectorised binning. Returns ``(i, j)`` int arrays, ``-1`` where out of FOV."""
        r = np.asarray(r, dtype=np.float64)
        phi = np.asarray(phi, dtype=np.float64)
        theta = np.asarray(theta, dtype=np.float64)
        k = self.beam_count
        s = np.searchsorted(self._theta_bounds, theta + ANGLE_TOL, side="right") - 1
        valid = (s >= 0) & (s < k) & (r > 0)
        j = k - 1 - s
        step = np.deg2rad(self.azimuth_resolution)
        ph = np.mod(phi, 2 * np.pi)
        i = np.floor((ph + ANGLE_TOL) / step).astype(np.int64)
        m = self.azimuth_steps
        if self.full_circle:
            i = np.mod(i, m)
        else:
            valid &= i < m
        i = np.where(valid, i, -1)
        j = np.where(valid, j, -1)
        return i, j

    def bin_point(self, s):
        """Ray whose angular bin holds ``s``, or ``None`` outside the FOV."""
        i, j = self.bin_rays(s.r, s.phi, s.theta)
        if int(i) < 0:
            return None
        return RayIndex(int(i), int(j))

    def ray_ids(self, i, j):
        """Flat ray id ``j * azimuth_steps + i``."""
        return np.asarray(j) * self.azimuth_steps + np.asarray(i)

    def to_toml(self):
        def arr(v):
            return "[" + ", ".join(repr(float(x)) for x in v) + "]"

        rv = self.mount.rotvec
        return (
            f"vertical_fov_deg = {arr(self.vertical_fov)}\n"
            f"horizontal_fov_deg = {float(self.horizontal_fov)!r}\n"
            f"beam_count = {self.beam_count}\n"
            f"elevation_table_deg = {arr(self.elevation_table)}\n"
            f"azimuth_resolution_deg = {float(self.azimuth_resolution)!r}\n"
            f"range_m = {arr(self.range)}\n"
            f"mount = {{ rotation_vector_rad = {arr(rv)}, translation_m = {arr(self.mount.t)} }}\n"
        )


def sector_of(idx):
    i, j = idx
    bu, bv = SECTOR_SHAPE
    return SectorIndex(j // bu, i // bv)


def default_pandar64():
    """Model matching the reference 64-beam configuration."""
    return LidarModel()


def _key_line(text, key):
    m = re.search(rf"^[ \t]*{re.escape(key)}[ \t]*=", text, flags=re.MULTILINE)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _pair(doc, key, text):
    v = doc[key]
    if not isinstance(v, list) or len(v) != 2 or not all(isinstance(x, (int, float)) for x in v):
        raise ConfigError("expected [min, max] numbers", key, _key_line(text, key))
    return (float(v[0]), float(v[1]))


def _number(doc, key, text):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError("expected a number", key, _key_line(text, key))
    return float(v)


def _vec3(v, key, line):
    if not isinstance(v, list) or len(v) != 3 or not all(isinstance(x, (int, float)) for x in v):
        raise ConfigError("expected three numbers", key, line)
    return [float(x) for x in v]


def parse_lidar_config(text):
    """Build a :class:`LidarModel` from TOML key-value text.

    Absent keys fall back to the 64-beam defaults. A ``beam_count`` without
    ``elevation_table_deg`` yields an evenly spaced table over the FOV.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        if m:
            line = int(m.group(1))
        elif "end of document" in str(exc):
            line = text.count("\n") + (0 if text.endswith("\n") else 1)
        else:
            line = None
        raise ConfigError(str(exc), line=line) from exc

    known = {
        "vertical_fov_deg", "horizontal_fov_deg", "beam_count", "elevation_table_deg",
        "azimuth_resolution_deg", "range_m", "mount",
    }
    for key in doc:
        if key not in known:
            raise ConfigError("unknown key", key, _key_line(text, key))

    base = LidarModel()
    kw = {}
    if "vertical_fov_deg" in doc:
        kw["vertical_fov"] = _pair(doc, "vertical_fov_deg", text)
    if "horizontal_fov_deg" in doc:
        kw["horizontal_fov"] = _number(doc, "horizontal_fov_deg", text)
    if "azimuth_resolution_deg" in doc:
        kw["azimuth_resolution"] = _number(doc, "azimuth_resolution_deg", text)
    if "range_m" in doc:
        kw["range"] = _pair(doc, "range_m", text)

    beam_count = doc.get("beam_count")
    if beam_count is not None and (isinstance(beam_count, bool) or not isinstance(beam_count, int) or beam_count < 1):
        raise ConfigError("expected a positive integer", "beam_count", _key_line(text, "beam_count"))
    if "elevation_table_deg" in doc:
        table = doc["elevation_table_deg"]
        line = _key_line(text, "elevation_table_deg")
        if not isinstance(table, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in table
        ):
            raise ConfigError("expected a list of numbers", "elevation_table_deg", line)
        if beam_count is not None and beam_count != len(table):
            raise ConfigError(
                f"beam_count {beam_count} disagrees with {len(table)} table entries",
                "beam_count",
                _key_line(text, "beam_count"),
            )
        kw["elevation_table"] = tuple(float(x) for x in table)
    elif beam_count is not None and beam_count != base.beam_count:
        kw["elevation_table"] = uniform_elevation_table(
            beam_count, kw.get("vertical_fov", base.vertical_fov)
        )

    if "mount" in doc:
        mount = doc["mount"]
        line = _key_line(text, "mount")
        if not isinstance(mount, dict):
            raise ConfigError("expected a table", "mount", line)
        extra = set(mount) - {"rotation_vector_rad", "translation_m"}
        if extra:
            raise ConfigError(f"unknown field(s) {sorted(extra)}", "mount", line)
        rv = _vec3(mount.get("rotation_vector_rad", [0, 0, 0]), "mount.rotation_vector_rad", line)
        tr = _vec3(mount.get("translation_m", [0, 0, 0]), "mount.translation_m", line)
        kw["mount"] = RigidTransform.from_rotvec(rv, tr, "lidar", "vehicle")

    try:
        return LidarModel(**kw)
    except ValueError as exc:
        key = {
            "vertical_fov": "vertical_fov_deg",
            "elevation_table": "elevation_table_deg",
            "azimuth_resolution": "azimuth_resolution_deg",
            "horizontal_fov": "horizontal_fov_deg",
            "range": "range_m",
        }
        culprit = next((v for k, v in key.items() if str(exc).startswith(k)), None)
        raise ConfigError(str(exc), culprit, _key_line(text, culprit) if culprit else None) from exc


def load_lidar_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_lidar_config(fh.read())


__all__ = [
    "ANGLE_TOL", "SECTOR_SHAPE", "LidarModel", "RayIndex", "SectorIndex", "SphericalCoord",
    "default_pandar64", "load_lidar_config", "pandar64_elevation_table", "parse_lidar_config",
    "sector_of", "uniform_elevation_table",
]
