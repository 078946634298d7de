from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aosearch.aoscore import IntegralImage, integrate
from aosearch.detect import (Detection, DetectorConfig, ReferenceDetector, detect,
                             expected_person_area, expected_person_diameter,
                             filter_by_confidence, make_detector, register_detector,
                             registered_detectors)
from aosearch.scenesim import capture, generate_forest
from aosearch.terrain import CameraIntrinsics, ElevationModel, Pose

GSD = CameraIntrinsics().ground_sample_distance(35.0)


def make_image(pixels):
    n = pixels.shape[0]
    v, u = np.mgrid[0:n, 0:n] + 0.5
    ground = np.stack([u * GSD, -v * GSD, np.zeros_like(u)], axis=-1)
    counts = np.where(np.isnan(pixels), 0, 1)
    return IntegralImage(pixels.astype(np.float64), counts, Pose(0, 0, 35),
                         CameraIntrinsics(resolution_px=n), ground, 1)


def disk(n, cx, cy, r):
    v, u = np.mgrid[0:n, 0:n] + 0.5
    return (u - cx) ** 2 + (v - cy) ** 2 <= r * r


class TestDefaults:
    def test_expected_area(self):
        r_px = 0.4 / (2 * 35 * math.tan(math.radians(25.41)) / 512)
        assert expected_person_area() == pytest.approx(math.pi * r_px ** 2)
        assert expected_person_area() == pytest.approx(119.16, abs=0.01)
        assert expected_person_diameter() == 12

    def test_config_validation(self):
        for bad in ({"intensity_threshold": 0.0}, {"intensity_threshold": 1.0},
                    {"min_blob_px": 0}, {"min_blob_px": 10, "max_blob_px": 5},
                    {"merge_distance_px": -1}, {"expected_person_area_px": 0.0}):
            with pytest.raises(ValueError):
                DetectorConfig(**bad)

    def test_detection_validation(self):
        with pytest.raises(ValueError):
            Detection((5, 0, 5, 3), 0.5, (0, 0, 0))
        with pytest.raises(ValueError):
            Detection((0, 0, 5, 3), 1.5, (0, 0, 0))


class TestDetect:
    def test_uniform_image(self):
        assert detect(make_image(np.full((64, 64), 0.3))) == []

    def test_unoccluded_disk(self):
        px = np.full((128, 128), 0.3)
        mask = disk(128, 60.0, 70.0, 0.4 / GSD)
        px[mask] = 0.9
        dets = detect(make_image(px))
        assert len(dets) == 1
        d = dets[0]
        assert d.confidence >= 0.9
        vv, uu = np.nonzero(mask)
        assert d.bbox == (uu.min(), vv.min(), uu.max() + 1, vv.max() + 1)
        assert d.area_px == mask.sum()

    def test_world_center_under_blob(self):
        px = np.full((128, 128), 0.3)
        px[disk(128, 40.0, 90.0, 6.0)] = 0.9
        d = detect(make_image(px))[0]
        assert d.world_center[:2] == pytest.approx((40.0 * GSD, -90.0 * GSD), abs=1e-9)

    def test_half_occluded_disk_scores_lower(self):
        base = np.full((128, 128), 0.3)
        mask = disk(128, 64.0, 64.0, 6.2)
        clear = base.copy()
        clear[mask] = 0.9
        # every other pixel of the disk averaged with canopy temperature
        occl = base.copy()
        occl[mask] = 0.5 * 0.9 + 0.5 * 0.25
        c_clear = detect(make_image(clear))[0].confidence
        c_occl = detect(make_image(occl))[0].confidence
        assert c_occl < c_clear

    def test_area_factor(self):
        px = np.full((128, 128), 0.3)
        px[60:64, 60:64] = 0.9  # 16 px, peak contrast 1
        d = detect(make_image(px))[0]
        assert d.confidence == pytest.approx(16 / expected_person_area())

    def test_contrast_formula(self):
        px = np.full((128, 128), 0.3)
        px[disk(128, 64, 64, 8.0)] = 0.6
        d = detect(make_image(px))[0]
        assert d.confidence == pytest.approx((0.6 - 0.3) / (0.9 - 0.3))

    def test_blob_size_bounds(self):
        px = np.full((128, 128), 0.3)
        px[10, 10] = 0.9
        px[50:100, 50:100] = 0.9
        assert detect(make_image(px)) == []

    def test_all_invalid(self):
        dets = detect(make_image(np.full((16, 16), np.nan)))
        assert dets == [] and dets.diagnostic == "all-invalid"

    def test_invalid_pixels_ignored(self):
        px = np.full((64, 64), 0.3)
        px[:, :20] = np.nan
        px[disk(64, 40, 30, 6)] = 0.9
        assert len(detect(make_image(px))) == 1

    def test_fragments_merge(self):
        px = np.full((128, 128), 0.3)
        px[60:68, 40:48] = 0.9
        px[60:68, 54:62] = 0.9  # 6 px gap, within a person diameter
        px[60:68, 100:108] = 0.9  # far away
        dets = detect(make_image(px))
        assert len(dets) == 2
        assert sorted(d.area_px for d in dets) == [64, 128]
        assert len(detect(make_image(px), DetectorConfig(merge_distance_px=0))) == 3

    def test_sorted_and_deterministic(self, rng):
        px = 0.3 + 0.01 * rng.standard_normal((128, 128))
        for k, c in enumerate([(20, 20), (64, 90), (100, 30)]):
            px[disk(128, *c, 3 + 2 * k)] = 0.5 + 0.1 * k
        a, b = detect(make_image(px)), detect(make_image(px))
        assert a == b
        assert [d.confidence for d in a] == sorted((d.confidence for d in a), reverse=True)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-0.25, 0.05), st.integers(0, 10_000))
    def test_shift_invariance(self, shift, seed):
        rng = np.random.default_rng(seed)
        px = 0.3 + 0.01 * rng.standard_normal((96, 96))
        for _ in range(3):
            px[disk(96, *rng.uniform(10, 86, 2), rng.uniform(2, 7))] = rng.uniform(0.5, 0.9)
        a = detect(make_image(px))
        b = detect(make_image(px + shift))
        assert [(d.bbox, d.area_px) for d in a] == [(d.bbox, d.area_px) for d in b]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_output_invariants(self, seed):
        rng = np.random.default_rng(seed)
        px = rng.random((64, 64)) ** 3
        for d in detect(make_image(px)):
            x0, y0, x1, y1 = d.bbox
            assert 0 <= x0 < x1 <= 64 and 0 <= y0 < y1 <= 64
            assert 0.0 <= d.confidence <= 1.0


class TestOcclusionConfidence:
    def test_paired_scenes(self):
        # same ground sampling distance as the default camera, 128 px wide
        fov = 2 * math.degrees(math.atan(64 * GSD / 35.0))
        intr = CameraIntrinsics(fov_deg=fov, resolution_px=128)
        dem = ElevationModel.flat(-40, -40, 40, 40)
        region = (-30.0, -30.0, 30.0, 30.0)
        pose = Pose(0.0, 0.0, 35.0)
        conf = {0.0: [], 0.5: []}
        for seed in range(100):
            for density in conf:
                scene = generate_forest(region, density, seed=seed, persons=[(0.0, 0.0)])
                img = integrate(capture(scene, [pose], intr, dem), dem, pose, intr)
                dets = [d for d in detect(img)
                        if math.hypot(*d.world_center[:2]) < 1.0]
                conf[density].append(max((d.confidence for d in dets), default=0.0))
        assert np.mean(conf[0.5]) < np.mean(conf[0.0])
        assert np.mean(conf[0.0]) > 0.9


class TestFilterAndRegistry:
    def _dets(self, confs):
        return [Detection((0, 0, 1, 1), c, (0, 0, 0)) for c in confs]

    def test_filter(self):
        kept = filter_by_confidence(self._dets([0.27, 0.11, 0.07]))
        assert [d.confidence for d in kept] == [0.27, 0.11]
        assert filter_by_confidence([]) == []
        assert len(filter_by_confidence(self._dets([0.0, 0.5]), 0.0)) == 2

    def test_reference_registered(self):
        assert "reference" in registered_detectors()
        det = make_detector("reference", intensity_threshold=0.2)
        assert isinstance(det, ReferenceDetector) and det.config.intensity_threshold == 0.2

    def test_unknown(self):
        with pytest.raises(KeyError):
            make_detector("yolo")

    def test_duplicate_and_nondeterministic(self):
        with pytest.raises(ValueError):
            register_detector("reference", ReferenceDetector)

        class Flaky:
            deterministic = False

            def __call__(self, image):
                return []

        register_detector("flaky-test", Flaky)
        with pytest.raises(ValueError, match="determinism"):
            make_detector("flaky-test")
