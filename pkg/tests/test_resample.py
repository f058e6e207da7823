import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from virtual_lidar.errors import DegenerateGround, DuplicateRay
from virtual_lidar.geometry import PointCloud, to_spherical
from virtual_lidar.ground_seg import import_mask
from virtual_lidar.lidar_model import LidarModel, RayIndex, default_pandar64
from virtual_lidar.resample import (
    GROUND,
    NONGROUND,
    GeneratedCloud,
    PlaneModel,
    ResampleParams,
    VirtualLidarResampler,
    ball_moments,
    bucket_nonground,
    fit_ground_plane,
    fit_local_plane,
    fit_plane,
    fuse,
    intersect,
    resample_ground,
    resample_nonground,
    resample_split,
)


def lidar(pts, intensity=None):
    return PointCloud(np.asarray(pts, float).reshape(-1, 3), intensity, "lidar")


def normal_equation_oracle(pts):
    # direct 3x3 solve of sum (z - a x - b y - c)^2
    x, y, z = pts.T
    A = np.array([[x @ x, x @ y, x.sum()], [x @ y, y @ y, y.sum()], [x.sum(), y.sum(), len(x)]])
    return np.linalg.solve(A, [x @ z, y @ z, z.sum()])


# -- intersect ------------------------------------------------------------------------

def test_intersect_examples():
    t, p = intersect(PlaneModel(0, 0, 5), [0, 0, 1])
    assert t == 5 and np.allclose(p, [0, 0, 5])
    assert intersect(PlaneModel(0, 0, 5), [0, 0, -1]) is None
    t, p = intersect(PlaneModel(1, 0, -2), [1, 0, 0])
    assert t == pytest.approx(2) and np.allclose(p, [2, 0, 0])
    assert intersect(PlaneModel(0, 0, -1.9), [1, 0, 0]) is None


@settings(max_examples=100)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-20, 20), st.floats(0, 2 * np.pi), st.floats(-1.4, 1.4))
def test_intersection_lies_on_plane_and_ray(a, b, c, phi, el):
    d = np.array([np.cos(el) * np.cos(phi), np.cos(el) * np.sin(phi), np.sin(el)])
    plane = PlaneModel(a, b, c)
    hit = intersect(plane, d)
    if hit is None:
        return
    t, p = hit
    assert t > 0
    assert abs(plane.residual(p)[0]) <= 1e-9 * max(1.0, t)
    np.testing.assert_allclose(p, t * d, atol=1e-12)


# -- plane fits ------------------------------------------------------------------------

def test_exact_plane_fits(rng):
    xy = rng.uniform(-5, 5, (40, 2))
    pts = np.column_stack([xy, 2 * xy[:, 0] + 3 * xy[:, 1] + 1])
    pl = fit_plane(pts)
    assert (pl.a, pl.b, pl.c) == pytest.approx((2, 3, 1), abs=1e-9)
    pl = fit_plane(np.column_stack([xy, np.zeros(40)]))
    assert (pl.a, pl.b, pl.c) == pytest.approx((0, 0, 0), abs=1e-12)


def test_noisy_fit_matches_oracle(rng):
    xy = rng.uniform(-1, 1, (50, 2))
    z = 0.1 * xy[:, 0] - 0.2 * xy[:, 1] + 3 + rng.normal(0, 1e-3, 50)
    pts = np.column_stack([xy, z])
    pl = fit_plane(pts)
    np.testing.assert_allclose([pl.a, pl.b, pl.c], normal_equation_oracle(pts), atol=1e-9)


def test_collinear_fit_is_none():
    t = np.linspace(0, 1, 10)
    assert fit_plane(np.column_stack([t, 2 * t, t])) is None
    assert fit_plane(np.zeros((2, 3))) is None


def test_ground_plane_fits(rng):
    xy = rng.uniform(-40, 40, (100_000, 2))
    pl = fit_ground_plane(lidar(np.column_stack([xy, np.full(len(xy), -2.0)])))
    assert (pl.a, pl.b, pl.c) == pytest.approx((0, 0, -2), abs=1e-12)
    pl = fit_ground_plane(lidar(np.column_stack([xy, 0.01 * xy[:, 0] - 1.8])))
    assert (pl.a, pl.b, pl.c) == pytest.approx((0.01, 0, -1.8), abs=1e-12)
    pts = np.column_stack([xy, 0.003 * xy[:, 1] - 1.9 + rng.normal(0, 0.02, len(xy))])
    pl = fit_ground_plane(lidar(pts))
    np.testing.assert_allclose([pl.a, pl.b, pl.c], normal_equation_oracle(pts), atol=1e-9)
    with pytest.raises(DegenerateGround):
        fit_ground_plane(lidar(np.zeros((2, 3))))


def test_ball_moments_brute_force(rng):
    xyz = rng.uniform(-6, 6, (3000, 3))
    anchors = np.vstack([xyz[rng.choice(3000, 200, replace=False)], rng.uniform(-7, 7, (50, 3))])
    n, S1, S2 = ball_moments(xyz, anchors, 1.0)
    for q, a in enumerate(anchors):
        d = xyz - a
        inside = d[np.einsum("ij,ij->i", d, d) < 1.0]
        assert n[q] == len(inside)
        np.testing.assert_allclose(S1[q], inside.sum(0), atol=1e-10)
        np.testing.assert_allclose(S2[q], inside.T @ inside, atol=1e-10)


def test_ball_moments_empty():
    n, S1, S2 = ball_moments(np.zeros((0, 3)), np.zeros((2, 3)), 1.0)
    assert n.shape == (2,) and (n == 0).all()


def test_local_plane_uses_all_nonground(rng):
    # the bucket has a single member; its neighbours from other rays carry the fit
    xy = rng.uniform(-0.5, 0.5, (30, 2))
    pts = np.column_stack([10 + xy[:, 0], xy[:, 1], 0.5 * xy[:, 0] + 1.0])
    model = default_pandar64()
    buckets = bucket_nonground(lidar(pts), model)
    pl = fit_local_plane(buckets[0], lidar(pts))
    assert pl is not None and pl.axis == 2
    assert (pl.a, pl.b, pl.c) == pytest.approx((0.5, 0.0, -4.0), abs=1e-9)
    assert fit_local_plane(buckets[0], lidar(pts), ResampleParams(min_fit_points=100)) is None


# -- buckets -------------------------------------------------------------------------------

def test_bucket_examples(pandar):
    assert len(bucket_nonground(lidar(np.zeros((0, 3))), pandar)) == 0
    b = bucket_nonground(lidar(10 * pandar.ray_direction((3, 5))), pandar)
    assert len(b) == 1 and b[0].ray == RayIndex(3, 5) and list(b[0].members) == [0]


def test_bucket_brute_force(small_model, rng):
    m = small_model
    d = rng.normal(size=(10_000, 3))
    pts = d / np.linalg.norm(d, axis=1, keepdims=True) * rng.uniform(1, 100, (10_000, 1))
    b = bucket_nonground(lidar(pts), m)
    s = to_spherical(pts)
    seen = np.zeros(len(pts), int)
    for bucket in b:
        for q in bucket.members:
            assert m.bin_point(type(s)(s.r[q], s.phi[q], s.theta[q])) == bucket.ray
            seen[q] += 1
        r = s.r[bucket.members]
        assert (np.diff(r) >= 0).all()
    expected = np.array([m.bin_point(type(s)(s.r[q], s.phi[q], s.theta[q])) is not None for q in range(len(pts))])
    np.testing.assert_array_equal(seen, expected.astype(int))
    assert b.dropped == int((~expected).sum())


# -- non-ground resampling --------------------------------------------------------------------

def test_wall_return(pandar):
    y, z = np.meshgrid(np.arange(-3, 3, 0.05), np.arange(-1.5, 1.5, 0.05))
    wall = np.column_stack([np.full(y.size, 10.0), y.ravel(), z.ravel()])
    res, diag = resample_nonground(lidar(wall), pandar)
    j0 = pandar.elevation_table.index(min(pandar.elevation_table, key=abs))
    out = res.cloud
    hit = np.flatnonzero((out.ray_i == 0) & (out.ray_j == j0))
    assert len(hit) == 1
    p = out.xyz[hit[0]]
    expected = 10.0 / pandar.ray_direction((0, j0))[0] * pandar.ray_direction((0, j0))
    assert np.linalg.norm(p - expected) <= 0.02
    if pandar.elevation_table[j0] == 0.0:
        assert np.linalg.norm(p - [10, 0, 0]) <= 0.02
    assert diag["degenerate_buckets"] == 0


def test_horizontal_ray_hits_wall_at_ten():
    m = LidarModel(elevation_table=(-2.0, 0.0, 2.0), azimuth_resolution=0.2)
    y, z = np.meshgrid(np.arange(-3, 3, 0.05), np.arange(-1.5, 1.5, 0.05))
    wall = np.column_stack([np.full(y.size, 10.0), y.ravel(), z.ravel()])
    out = resample_nonground(lidar(wall), m)[0].cloud
    hit = np.flatnonzero((out.ray_i == 0) & (out.ray_j == 1))
    assert np.linalg.norm(out.xyz[hit[0]] - [10, 0, 0]) <= 0.02


def test_degenerate_bucket_falls_back(pandar):
    a = 12 * pandar.ray_direction((100, 40))
    b = 30 * pandar.ray_direction((900, 10))
    res, diag = resample_nonground(lidar([a, b], [7.0, 9.0]), pandar)
    out = res.cloud
    assert len(out) == 2 and out.fallback.all()
    assert diag["degenerate_buckets"] == 2
    got = {(int(i), int(j)): p for i, j, p in zip(out.ray_i, out.ray_j, out.xyz)}
    np.testing.assert_allclose(got[(100, 40)], a, atol=1e-12)
    np.testing.assert_allclose(got[(900, 10)], b, atol=1e-12)
    assert sorted(out.intensity) == [7.0, 9.0]


def test_empty_nonground(pandar):
    res, _ = resample_nonground(lidar(np.zeros((0, 3))), pandar)
    assert len(res.cloud) == 0 and not res.occupied_rays.any() and not res.blocked_sectors.any()


def test_intensity_from_nearest_member(pandar):
    d = pandar.ray_direction((10, 30))
    pts = np.array([20 * d, 19.5 * d, 21 * d])
    res, _ = resample_nonground(lidar(pts, [1.0, 2.0, 3.0]), pandar)
    assert res.cloud.intensity.tolist() == [2.0]


# -- ground resampling -------------------------------------------------------------------------

def test_flat_ground_per_beam(pandar):
    k, m = pandar.beam_count, pandar.azimuth_steps
    plane = PlaneModel(0.0, 0.0, -1.9)
    out = resample_ground(plane, pandar, np.zeros(pandar.sector_grid, bool), np.zeros((k, m), bool))
    table = np.array(pandar.elevation_table)
    rows = np.bincount(out.ray_j, minlength=k)
    for j, eps in enumerate(table):
        t = 1.9 / np.sin(-np.deg2rad(eps)) if eps < 0 else np.inf
        assert rows[j] == (m if t <= pandar.range[1] else 0)
    j10 = int(np.argmin(np.abs(table + 10)))
    r = np.linalg.norm(out.xyz[out.ray_j == j10], axis=1)
    np.testing.assert_allclose(r, 1.9 / np.sin(-np.deg2rad(table[j10])), rtol=1e-12)
    assert (out.origin == GROUND).all()


def test_ten_degree_beam_range():
    m = LidarModel(elevation_table=(-10.0, 0.0, 5.0), azimuth_resolution=1.0)
    out = resample_ground(PlaneModel(0, 0, -1.9), m, np.zeros(m.sector_grid, bool), np.zeros((3, 360), bool))
    assert set(out.ray_j.tolist()) == {0}
    np.testing.assert_allclose(np.linalg.norm(out.xyz, axis=1), 1.9 / np.sin(np.deg2rad(10)), rtol=1e-12)
    assert abs(1.9 / np.sin(np.deg2rad(10)) - 10.94) < 0.01


def test_blocked_sector_and_occupied_rays(pandar):
    k, m = pandar.beam_count, pandar.azimuth_steps
    blocked = np.zeros(pandar.sector_grid, bool)
    blocked[3, 5] = True
    occ = np.zeros((k, m), bool)
    occ[0, 0] = True
    out = resample_ground(PlaneModel(0, 0, -1.9), pandar, blocked, occ)
    in_sector = (out.ray_j // 2 == 3) & (out.ray_i // 25 == 5)
    assert not in_sector.any()
    assert not ((out.ray_j == 0) & (out.ray_i == 0)).any()
    assert out.diagnostics["blocked_rays"] == 50


def test_ground_intensity_nearest(pandar):
    ground = lidar([[5, 0, -1.9], [-5, 0, -1.9]], [11.0, 22.0])
    out = resample_ground(
        PlaneModel(0, 0, -1.9), pandar, np.zeros(pandar.sector_grid, bool),
        np.zeros((64, 1800), bool), ground=ground,
    )
    front = out.xyz[:, 0] > 0
    assert set(out.intensity[front & (np.abs(out.xyz[:, 1]) < 1)]) == {11.0}


# -- fusion ----------------------------------------------------------------------------------------

def gen(ri, rj, origin):
    n = len(ri)
    return GeneratedCloud(np.ones((n, 3)), np.zeros(n), np.array(ri), np.array(rj), np.full(n, origin, np.uint8))


def test_fuse_cases():
    vg = gen([0, 1], [0, 0], GROUND)
    out = fuse(GeneratedCloud.empty(), vg)
    np.testing.assert_array_equal(out.ray_i, vg.ray_i)
    assert len(fuse(GeneratedCloud.empty(), GeneratedCloud.empty())) == 0
    assert len(fuse(gen([5], [1], NONGROUND), vg)) == 3
    with pytest.raises(DuplicateRay):
        fuse(gen([1], [0], NONGROUND), vg)


def wall_and_ground(model):
    y, z = np.meshgrid(np.arange(-4, 4, 0.05), np.arange(-1.9, 1.0, 0.05))
    wall = np.column_stack([np.full(y.size, 12.0), y.ravel(), z.ravel()])
    gx, gy = np.meshgrid(np.arange(-40, 40, 0.25), np.arange(-40, 40, 0.25))
    g = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, -1.9)])
    g = g[~((g[:, 0] >= 11.9) & (np.abs(g[:, 1]) <= 4))]
    pts = np.vstack([wall, g])
    mask = np.r_[np.zeros(len(wall), bool), np.ones(len(g), bool)]
    return lidar(pts, np.arange(len(pts)) % 256), mask


def test_fused_wall_and_ground_invariants(pandar):
    cloud, mask = wall_and_ground(pandar)
    gen_cloud, plane = resample_split(import_mask(cloud, mask), pandar)
    assert abs(plane.c + 1.9) < 1e-9
    d = gen_cloud.xyz
    r = np.linalg.norm(d, axis=1)
    ray = pandar.ray_directions[gen_cloud.ray_j, gen_cloud.ray_i]
    assert (np.linalg.norm(d - r[:, None] * ray, axis=1) <= 1e-6 * r).all()
    assert ((r >= pandar.range[0]) & (r <= pandar.range[1])).all()
    ids = gen_cloud.ray_ids(pandar)
    assert len(np.unique(ids)) == len(ids)
    ng = gen_cloud.origin == NONGROUND
    assert gen_cloud.diagnostics["generated_points"] == ng.sum() + (~ng).sum()
    # no ground return behind the wall inside its blocked sectors
    behind = (~ng) & (d[:, 0] > 12.5) & (np.abs(d[:, 1] / d[:, 0]) < 4 / 12.5)
    assert not behind.any()


def test_zero_residual_reproduction(pandar):
    # sampling an exact scan of planar surfaces gives back the same scan
    plane = PlaneModel(0.0, 0.0, -1.9)
    k, m = pandar.beam_count, pandar.azimuth_steps
    scan = resample_ground(plane, pandar, np.zeros(pandar.sector_grid, bool), np.zeros((k, m), bool))
    cloud = lidar(scan.xyz, np.full(len(scan), 3.0))
    again, _ = resample_split(import_mask(cloud, np.ones(len(cloud), bool)), pandar)
    np.testing.assert_array_equal(again.ray_ids(pandar), scan.ray_ids(pandar))
    assert np.abs(again.xyz - scan.xyz).max() <= 1e-6
    assert (again.intensity == 3.0).all()


# -- estimator ---------------------------------------------------------------------------------------

def test_resampler_estimator(pandar):
    cloud, mask = wall_and_ground(pandar)
    X = np.column_stack([cloud.xyz, cloud.intensity])
    est = VirtualLidarResampler(lidar_model=pandar, neighborhood_radius=1.0)
    assert clone(est).get_params()["neighborhood_radius"] == 1.0
    pts, is_ground = est.fit_resample(X, mask)
    assert pts.shape[1] == 4 and len(pts) == len(is_ground)
    assert est.diagnostics_["generated_points"] == len(pts)
    ref, _ = resample_split(import_mask(cloud, mask), pandar)
    np.testing.assert_array_equal(pts[:, :3], ref.xyz)
    auto, _ = VirtualLidarResampler(lidar_model=pandar).fit_resample(X)
    assert len(auto) > 0
    with pytest.raises(ValueError):
        est.fit(X[:, :2])


def test_params_validation():
    with pytest.raises(ValueError):
        ResampleParams(neighborhood_radius=0)
    with pytest.raises(ValueError):
        ResampleParams(min_fit_points=2)
