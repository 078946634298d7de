from __future__ import annotations

import numpy as np
import pytest

from aosearch import _pykernels, kernels
from aosearch.terrain import CameraIntrinsics, ElevationModel, Pose, camera_row

BACKENDS = kernels.available_backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="extension not built")


def _both(fn):
    out = {}
    for name in BACKENDS:
        with kernels.backend(name):
            out[name] = fn()
    return out


class TestBackendSelection:
    def test_python_always_available(self):
        assert "python" in BACKENDS

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")

    def test_context_restores(self):
        before = kernels.BACKEND
        with kernels.backend("python"):
            assert kernels.BACKEND == "python"
        assert kernels.BACKEND == before


@needs_cython
class TestBackendEquivalence:
    def test_march_surface(self, rng):
        h = 5.0 + rng.normal(0, 1.0, (40, 40))
        h[10:13, 20:23] = np.nan
        dirs = rng.normal(0, 0.3, (3000, 3))
        dirs[:, 2] = -1.0
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        res = _both(lambda: kernels.march_surface((20.0, 20.0, 45.0), dirs, h, 0.5, 0.5, 1.0,
                                                  0.0, 0.25))
        np.testing.assert_array_equal(res["python"][1], res["cython"][1])
        np.testing.assert_allclose(res["python"][0], res["cython"][0], atol=1e-9)
        assert set(np.unique(res["python"][1])) <= {0, 1, 2}

    def test_disks_contain(self, rng):
        centers = rng.uniform(0, 50, (300, 2))
        radii = rng.uniform(0.5, 3.0, 300)
        idx = kernels.DiskIndex(centers, radii)
        pts = rng.uniform(-5, 55, (20000, 2))
        active = rng.random(20000) < 0.8
        res = _both(lambda: kernels.disks_contain(pts, centers, radii, idx, active))
        np.testing.assert_array_equal(res["python"], res["cython"])

    def test_integrate_frames(self, rng):
        intr = CameraIntrinsics(resolution_px=64)
        ground = np.column_stack([rng.uniform(-10, 10, (64 * 64, 2)), np.zeros(64 * 64)])
        valid = rng.random(64 * 64) < 0.95
        frames = rng.random((7, 64, 64)).astype(np.float32)
        cams = np.stack([camera_row(Pose(rng.normal(), rng.normal(), 35.0, rng.normal() * 3))
                         for _ in range(7)])
        res = _both(lambda: kernels.integrate_frames(ground, valid, frames, cams,
                                                     intr.focal_px, intr.center_px))
        np.testing.assert_allclose(res["python"][0], res["cython"][0], rtol=1e-12)
        np.testing.assert_array_equal(res["python"][1], res["cython"][1])


class TestDisksContainOracle:
    def test_matches_brute_force(self, rng):
        centers = rng.uniform(0, 20, (60, 2))
        radii = rng.uniform(0.3, 2.0, 60)
        pts = rng.uniform(-2, 22, (5000, 2))
        d2 = ((pts[:, None, :] - centers[None]) ** 2).sum(-1)
        inside = d2 <= radii[None] ** 2
        want = np.where(inside.any(1), inside.argmax(1), -1)
        for name in BACKENDS:
            with kernels.backend(name):
                got = kernels.disks_contain(pts, centers, radii, kernels.DiskIndex(centers, radii))
            np.testing.assert_array_equal(got, want)

    def test_no_disks(self):
        got = kernels.disks_contain(np.zeros((3, 2)), np.zeros((0, 2)), np.zeros(0),
                                    kernels.DiskIndex(np.zeros((0, 2)), np.zeros(0)))
        np.testing.assert_array_equal(got, -1)


class TestMarchOracle:
    def test_flat_plane_closed_form(self, rng):
        dem = ElevationModel.flat(-100, -100, 100, 100, 2.0)
        dirs = rng.normal(0, 0.4, (500, 3))
        dirs[:, 2] = -1.0
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for name in BACKENDS:
            with kernels.backend(name):
                pts, st = kernels.march_surface((0, 0, 40), dirs, dem.heights, dem.node_x0,
                                                dem.node_y0, 1.0, 0.0, 0.25)
            t = 38.0 / -dirs[:, 2]
            np.testing.assert_array_equal(st, 1)
            np.testing.assert_allclose(pts, np.array([0, 0, 40]) + t[:, None] * dirs, atol=0.02)

    def test_upward_ray_misses(self):
        h = np.zeros((5, 5))
        pts, st = _pykernels.march_surface(2.0, 2.0, 10.0, np.array([[0.0, 0.0, 1.0]]), h,
                                           0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.25, 0.01)
        assert st[0] == 0 and np.isnan(pts[0]).all()
