import numpy as np
import pytest

from virtual_lidar.alignment import ObjectLabel, ego_cull_mask, range_filter, vehicle_to_world, world_to_lidar
from virtual_lidar.errors import FrameMismatch
from virtual_lidar.geometry import PointCloud, RigidTransform, apply, rodrigues
from virtual_lidar.lidar_model import LidarModel


def label(center=(0, 0, 0), rotation=(0, 0, 0), size=(4.5, 1.9, 1.6), id="car0"):
    return ObjectLabel(id, "car", size, center, rotation)


def homogeneous(R, t):
    M = np.eye(4)
    M[:3, :3] = R
    M[:3, 3] = t
    return M


def test_label_validation():
    with pytest.raises(ValueError):
        label(size=(1, 0, 1))
    with pytest.raises(ValueError):
        label(rotation=(0, np.inf, 0))
    assert label().is_vehicle
    assert not ObjectLabel("p", "pedestrian", (1, 1, 1), (0, 0, 0)).is_vehicle


def test_vehicle_to_world_examples():
    np.testing.assert_array_equal(vehicle_to_world(label()).matrix, np.eye(4))
    T = vehicle_to_world(label(center=(10, 5, 1)))
    np.testing.assert_array_equal(T.R, np.eye(3))
    np.testing.assert_array_equal(T.t, [10, 5, 1])
    T = vehicle_to_world(label(center=(10, 0, 0), rotation=(0, 0, np.pi / 2)))
    np.testing.assert_allclose(T.transform_points(np.array([1.0, 0, 0])), [10, 1, 0], atol=1e-15)
    assert (T.source, T.target) == ("vehicle", "world")


def test_world_to_lidar_identity():
    m = LidarModel(mount=RigidTransform.identity("lidar", "vehicle"))
    np.testing.assert_array_equal(world_to_lidar(label(), m).matrix, np.eye(4))


def test_world_to_lidar_mount_offset(pandar):
    # the sensor sits 0.25 m above the box centre, so the centre appears below it
    T = world_to_lidar(label(), pandar)
    np.testing.assert_allclose(T.transform_points(np.zeros(3)), [0, 0, -0.25], atol=1e-15)
    assert (T.source, T.target) == ("world", "lidar")


def test_world_to_lidar_matches_homogeneous_oracle(rng):
    mount = RigidTransform.from_rotvec([0.01, -0.02, 0.3], [1.2, 0.1, 1.7], "lidar", "vehicle")
    m = LidarModel(mount=mount)
    for _ in range(100):
        lab = label(rng.uniform(-50, 50, 3), rng.normal(size=3))
        M_wc = homogeneous(rodrigues(lab.rotation), lab.center)
        M_vl = homogeneous(mount.R, mount.t)
        oracle = np.linalg.inv(M_vl) @ np.linalg.inv(M_wc)
        np.testing.assert_allclose(world_to_lidar(lab, m).matrix, oracle, atol=1e-9)
        # label centre lands at invert(mount) applied to the origin
        c = world_to_lidar(lab, m).transform_points(np.asarray(lab.center))
        np.testing.assert_allclose(c, -mount.R.T @ mount.t, atol=1e-9)


def lidar_cloud(pts):
    return PointCloud(np.asarray(pts, float), frame="lidar")


def test_range_filter_examples(pandar):
    c = lidar_cloud([[250, 0, 0], [200, 0, 0], [0.5, 0, 0], [0.49, 0, 0], [10, 0, 0]])
    out, keep = range_filter(c, pandar, return_mask=True)
    np.testing.assert_array_equal(keep, [False, True, True, False, True])
    np.testing.assert_array_equal(out.xyz[:, 0], [200, 0.5, 10])


def test_range_filter_brute_force(pandar, rng):
    d = rng.normal(size=(1000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = d * rng.uniform(0, 300, (1000, 1))
    out = range_filter(lidar_cloud(pts), pandar)
    expected = [p for p in pts if 0.5 <= np.sqrt(p @ p) <= 200]
    assert len(out) == len(expected)
    np.testing.assert_array_equal(out.xyz, np.array(expected))
    again = range_filter(out, pandar)
    np.testing.assert_array_equal(again.xyz, out.xyz)


def test_range_filter_requires_lidar_frame(pandar):
    with pytest.raises(FrameMismatch):
        range_filter(PointCloud([[1.0, 0, 0]], frame="world"), pandar)


def test_ego_cull_box(pandar):
    lab = label(center=(20, 5, 0.8), rotation=(0, 0, 0.7))
    T = world_to_lidar(lab, pandar)
    inside_w = np.asarray(lab.center) + rodrigues(lab.rotation) @ np.array([2.3, 0.0, 0.0])
    outside_w = np.asarray(lab.center) + rodrigues(lab.rotation) @ np.array([2.6, 0.0, 0.0])
    c = apply(T, PointCloud(np.array([inside_w, outside_w])))
    np.testing.assert_array_equal(ego_cull_mask(c, lab, T), [True, False])
