from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aosearch.terrain import (CameraIntrinsics, DEMParseError, DomainError, ElevationModel,
                              GeoOrigin, NodataError, Pose, dump_dem, ground_height, load_dem,
                              pixel_ray_to_ground, project_points, project_world_to_pixel,
                              rotation)

HEADER = "ncols {c}\nnrows {r}\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n"


def _grid_text(rows):
    return HEADER.format(c=len(rows[0]), r=len(rows)) + "\n".join(
        " ".join(str(v) for v in row) for row in rows) + "\n"


class TestLoadDem:
    def test_flat_two_by_two(self):
        dem = load_dem(_grid_text([[0, 0], [0, 0]]))
        assert (dem.n_rows, dem.n_cols) == (2, 2)
        np.testing.assert_array_equal(dem.heights, 0.0)

    def test_row_length_mismatch_reports_line(self):
        text = HEADER.format(c=3, r=2) + "1 2 3\n4 5\n"
        with pytest.raises(DEMParseError) as exc:
            load_dem(text)
        assert exc.value.line == 8

    def test_non_numeric_cell(self):
        text = HEADER.format(c=2, r=2) + "1 2\n3 x\n"
        with pytest.raises(DEMParseError) as exc:
            load_dem(text)
        assert exc.value.line == 8

    def test_bad_header(self):
        with pytest.raises(DEMParseError) as exc:
            load_dem("ncols 2\nrows 2\n")
        assert exc.value.line == 2

    def test_node_value_three_by_three(self):
        # heights 0..8 row-major in file order; node (1, 1) is the middle
        dem = load_dem(_grid_text([[0, 1, 2], [3, 4, 5], [6, 7, 8]]))
        x, y = dem.node_xy(1, 1)
        assert ground_height(dem, x, y) == 4.0

    def test_north_row_first(self):
        dem = load_dem(_grid_text([[9, 9], [1, 1]]))
        assert ground_height(dem, *dem.node_xy(0, 0)) == 1.0
        assert ground_height(dem, *dem.node_xy(0, 1)) == 9.0

    def test_dump_roundtrip(self):
        dem = ElevationModel(3.5, -2.0, 0.5, np.arange(12.0).reshape(3, 4) / 7.0)
        back = load_dem(dump_dem(dem))
        np.testing.assert_array_equal(back.heights, dem.heights)
        assert (back.origin_x, back.origin_y, back.cell_size) == (3.5, -2.0, 0.5)

    def test_nodata_roundtrip(self):
        dem = load_dem(_grid_text([[1, -9999], [2, 3]]))
        assert np.isnan(dem.heights).sum() == 1
        assert "-9999" in dump_dem(dem)


class TestGroundHeight:
    def test_flat(self):
        dem = ElevationModel.flat(0, 0, 10, 10, 240.0)
        assert ground_height(dem, 3.3, 7.1) == 240.0

    def test_cell_midpoint(self):
        dem = ElevationModel(0.0, 0.0, 1.0, [[0.0, 0.0], [2.0, 2.0]])
        assert ground_height(dem, 1.0, 1.0) == pytest.approx(1.0)

    def test_outside_footprint(self):
        dem = ElevationModel.flat(0, 0, 10, 10)
        with pytest.raises(DomainError):
            ground_height(dem, -5.0, 1.0)

    def test_nodata_neighbour(self):
        dem = ElevationModel(0.0, 0.0, 1.0, [[0.0, -9999.0], [0.0, 0.0]])
        with pytest.raises(NodataError):
            ground_height(dem, 0.7, 0.7)

    def test_array_queries(self):
        dem = ElevationModel.from_function(lambda x, y: x + 2 * y, 0, 0, 5, 5)
        xs = np.array([[0.5, 1.25], [3.0, 4.5]])
        np.testing.assert_allclose(ground_height(dem, xs, xs), 3 * xs, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_exact_at_nodes(self, nr, nc, seed):
        h = np.random.default_rng(seed).normal(100.0, 5.0, (nr, nc))
        dem = ElevationModel(10.0, 20.0, 2.0, h)
        for r in range(nr):
            for c in range(nc):
                assert ground_height(dem, *dem.node_xy(c, r)) == h[r, c]

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.5, 3.5), st.floats(0.5, 3.5), st.integers(0, 2**32 - 1))
    def test_continuity(self, x, y, seed):
        h = np.random.default_rng(seed).uniform(0, 10, (5, 5))
        dem = ElevationModel(0.0, 0.0, 1.0, h)
        eps = 1e-7
        # bilinear surfaces are Lipschitz with constant <= max neighbour difference
        lip = 2 * np.abs(np.diff(h, axis=0)).max() + 2 * np.abs(np.diff(h, axis=1)).max()
        d = abs(ground_height(dem, x + eps, y + eps) - ground_height(dem, x, y))
        assert d <= lip * 2 * eps + 1e-12


class TestCamera:
    def test_default_intrinsics(self):
        intr = CameraIntrinsics()
        assert (intr.fov_deg, intr.resolution_px) == (50.82, 512)
        assert intr.focal_px == pytest.approx(256 / math.tan(math.radians(25.41)))

    def test_invalid_intrinsics(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fov_deg=180.0)
        with pytest.raises(ValueError):
            CameraIntrinsics(resolution_px=0)

    def test_angles_wrapped(self):
        p = Pose(0, 0, 10, yaw=540.0, pitch=-180.0, roll=190.0)
        assert (p.yaw, p.pitch, p.roll) == (180.0, 180.0, -170.0)

    def test_rotation_orthonormal(self):
        r = rotation(Pose(0, 0, 0, 33.0, 4.0, -7.0))
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0)

    def test_nadir_center(self):
        assert project_world_to_pixel(Pose(0, 0, 35), CameraIntrinsics(), (0, 0, 0)) == \
            pytest.approx((256.0, 256.0))

    def test_footprint_edge_closed_form(self):
        intr = CameraIntrinsics()
        t = math.tan(math.radians(25.41))
        x = 35 * t
        uv, ok = project_points(Pose(0, 0, 35), intr, [(x, 0.0, 0.0)])
        assert uv[0, 0] == pytest.approx(512 * (0.5 + (x / 35) / (2 * t)))
        assert uv[0, 0] == pytest.approx(512.0)
        assert not ok[0]
        assert project_world_to_pixel(Pose(0, 0, 35), intr, (x - 0.01, 0, 0)) is not None

    def test_axes_east_and_south(self):
        intr = CameraIntrinsics()
        u, v = project_world_to_pixel(Pose(0, 0, 35), intr, (1.0, 1.0, 0.0))
        assert u > 256 and v < 256

    def test_behind_camera(self):
        assert project_world_to_pixel(Pose(0, 0, 35), CameraIntrinsics(), (0, 0, 50)) is None

    def test_on_camera_plane(self):
        assert project_world_to_pixel(Pose(0, 0, 35), CameraIntrinsics(), (3, 0, 35)) is None

    def test_scale_consistency(self):
        intr = CameraIntrinsics()
        u1, _ = project_world_to_pixel(Pose(0, 0, 35), intr, (4, 0, 0))
        u2, _ = project_world_to_pixel(Pose(0, 0, 70), intr, (4, 0, 0))
        assert (u2 - 256) == pytest.approx(0.5 * (u1 - 256))

    def test_ground_sample_distance(self):
        assert CameraIntrinsics().ground_sample_distance(35.0) == pytest.approx(
            2 * 35 * math.tan(math.radians(25.41)) / 512)


class TestPixelRay:
    def test_center_pixel_hits_below(self):
        dem = ElevationModel.flat(-50, -50, 50, 50)
        p = pixel_ray_to_ground(Pose(3.0, -4.0, 35), CameraIntrinsics(), (256, 256), dem)
        np.testing.assert_allclose(p, (3.0, -4.0, 0.0), atol=1e-9)

    def test_off_center_planar_closed_form(self):
        intr = CameraIntrinsics()
        dem = ElevationModel.flat(-50, -50, 50, 50)
        u, v = 400.0, 100.0
        p = pixel_ray_to_ground(Pose(0, 0, 35), intr, (u, v), dem)
        f = intr.focal_px
        np.testing.assert_allclose(p[:2], (35 * (u - 256) / f, -35 * (v - 256) / f), atol=0.02)

    def test_nodata_hole_misses(self):
        h = np.full((11, 11), -9999.0)
        dem = ElevationModel(-5.5, -5.5, 1.0, h)
        assert pixel_ray_to_ground(Pose(0, 0, 35), CameraIntrinsics(), (256, 256), dem) is None

    def test_exits_footprint_misses(self):
        dem = ElevationModel.flat(100, 100, 110, 110)
        assert pixel_ray_to_ground(Pose(0, 0, 35), CameraIntrinsics(), (256, 256), dem) is None

    def test_sloped_terrain_hits_surface(self):
        dem = ElevationModel.from_function(lambda x, y: 0.2 * x + 5.0, -60, -60, 60, 60)
        p = pixel_ray_to_ground(Pose(0, 0, 40), CameraIntrinsics(), (300, 200), dem)
        assert abs(p[2] - ground_height(dem, p[0], p[1])) < 0.01

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-15, 15), st.floats(-15, 15), st.floats(-10, 10), st.floats(20, 60),
           st.floats(-180, 180))
    def test_round_trip(self, gx, gy, cx, z, yaw):
        intr = CameraIntrinsics()
        dem = ElevationModel.flat(-100, -100, 100, 100)
        pose = Pose(cx, 0.0, z, yaw)
        uv = project_world_to_pixel(pose, intr, (gx, gy, 0.0))
        if uv is None:
            return
        p = pixel_ray_to_ground(pose, intr, uv, dem)
        assert math.hypot(p[0] - gx, p[1] - gy) < 0.02


class TestGeoOrigin:
    def test_round_trip(self):
        g = GeoOrigin(48.3, 14.3)
        lat, lon = g.to_geo(123.0, -45.0)
        x, y = g.to_local(lat, lon)
        assert (x, y) == pytest.approx((123.0, -45.0), abs=1e-6)

    def test_one_degree_north(self):
        x, y = GeoOrigin(0.0, 0.0).to_local(1.0, 0.0)
        assert y == pytest.approx(2 * math.pi * 6_378_137.0 / 360.0)
