"""Reference person detector for integral images and the detector registry.

The reference detector thresholds the image relative to its median, labels
8-connected warm components and scores each one by its peak contrast and
its area relative to the expected area of a person.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy import ndimage

from .aoscore import IntegralImage
from .scenesim import DEFAULT_TEMPERATURES, PERSON_RADIUS_M
from .terrain import CameraIntrinsics


def expected_person_area(radius_m: float = PERSON_RADIUS_M, altitude_agl_m: float = 35.0,
                         intrinsics: CameraIntrinsics | None = None) -> float:
    """Pixel area of a nadir-viewed person disk."""
    intr = intrinsics or CameraIntrinsics()
    r_px = radius_m / intr.ground_sample_distance(altitude_agl_m)
    return math.pi * r_px * r_px


def expected_person_diameter(radius_m: float = PERSON_RADIUS_M, altitude_agl_m: float = 35.0,
                             intrinsics: CameraIntrinsics | None = None) -> int:
    """Person diameter in whole pixels (rounded)."""
    intr = intrinsics or CameraIntrinsics()
    return int(round(2.0 * radius_m / intr.ground_sample_distance(altitude_agl_m)))


@dataclass(frozen=True)
class Detection:
    """Pixel box ``[x_min, x_max) x [y_min, y_max)`` with a confidence in [0, 1]."""

    bbox: tuple[int, int, int, int]
    confidence: float
    world_center: tuple[float, float, float]
    area_px: int = 0
    peak: float = 0.0

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")

    def with_confidence(self, confidence: float) -> "Detection":
        return Detection(self.bbox, confidence, self.world_center, self.area_px, self.peak)


class DetectionList(list):
    """List of detections that can carry a diagnostic string (e.g. ``"all-invalid"``)."""

    def __init__(self, items=(), diagnostic: str | None = None):
        super().__init__(items)
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class DetectorConfig:
    """Parameters of the reference detector.

    Attributes:
        intensity_threshold: Margin above the median that marks a warm pixel.
        min_blob_px: Smallest accepted component area.
        max_blob_px: Largest accepted component area.
        t_person_ref: Reference person temperature for contrast scoring.
        expected_person_area_px: Area at which the area factor saturates.
        merge_distance_px: Warm fragments separated by gaps of at most this
            many pixels form one component; 0 gives plain 8-connectivity.
            Defaults to the expected person diameter.
    """

    intensity_threshold: float = 0.08
    min_blob_px: int = 4
    max_blob_px: int = 2000
    t_person_ref: float = DEFAULT_TEMPERATURES["t_person"]
    expected_person_area_px: float = field(default_factory=expected_person_area)
    merge_distance_px: int = field(default_factory=lambda: expected_person_diameter())

    def __post_init__(self):
        if not 0.0 < self.intensity_threshold < 1.0:
            raise ValueError("intensity_threshold must be in (0, 1)")
        if not 0 < self.min_blob_px <= self.max_blob_px:
            raise ValueError("need 0 < min_blob_px <= max_blob_px")
        if not self.expected_person_area_px > 0:
            raise ValueError("expected_person_area_px must be positive")
        if self.merge_distance_px < 0:
            raise ValueError("merge_distance_px must be >= 0")


_EIGHT = np.ones((3, 3), dtype=bool)


def detect(image: IntegralImage, cfg: DetectorConfig | None = None) -> DetectionList:
    """Warm-blob detections sorted by confidence (descending)."""
    cfg = cfg or DetectorConfig()
    valid = image.valid
    if not valid.any():
        return DetectionList([], diagnostic="all-invalid")
    px = image.pixels
    b = float(np.median(px[valid]))
    with np.errstate(invalid="ignore"):
        mask = valid & (px > b + cfg.intensity_threshold)
    if cfg.merge_distance_px > 0 and mask.any():
        grown = ndimage.binary_dilation(mask, _EIGHT,
                                        iterations=(cfg.merge_distance_px + 1) // 2)
        labels, n = ndimage.label(grown, structure=_EIGHT)
        labels[~mask] = 0
    else:
        labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return DetectionList()
    idx = np.arange(1, n + 1)
    areas = ndimage.sum_labels(mask, labels, idx)
    peaks = ndimage.maximum(np.where(mask, px, -np.inf), labels, idx)
    slices = ndimage.find_objects(labels)
    denom = cfg.t_person_ref - b
    g = image.ground_points
    out = []
    for k, sl in enumerate(slices):
        area = int(areas[k])
        if not cfg.min_blob_px <= area <= cfg.max_blob_px:
            continue
        ys, xs = sl
        comp = labels[sl] == k + 1
        w = np.where(comp, px[sl] - b, 0.0)
        gp = g[sl]
        wc = tuple(float((gp[..., j] * w).sum() / w.sum()) for j in range(3))
        contrast = (float(peaks[k]) - b) / denom if denom > 0 else 1.0
        conf = min(max(contrast, 0.0), 1.0) * min(1.0, area / cfg.expected_person_area_px)
        out.append(Detection((xs.start, ys.start, xs.stop, ys.stop), float(conf), wc, area,
                             float(peaks[k])))
    out.sort(key=lambda d: (-d.confidence, d.bbox[0], d.bbox[1]))
    return DetectionList(out)


def filter_by_confidence(detections, threshold: float = 0.10) -> list[Detection]:
    """Detections with ``confidence >= threshold``, order preserved."""
    return [d for d in detections if d.confidence >= threshold]


class Detector(Protocol):
    deterministic: bool

    def __call__(self, image: IntegralImage) -> list[Detection]: ...


@dataclass(frozen=True)
class ReferenceDetector:
    config: DetectorConfig = field(default_factory=DetectorConfig)
    deterministic: bool = True

    def __call__(self, image: IntegralImage) -> DetectionList:
        return detect(image, self.config)


_REGISTRY: dict[str, Callable[..., Detector]] = {}


def register_detector(name: str, factory: Callable[..., Detector]) -> None:
    """Make ``factory(**params)`` available to scenario configs under ``name``."""
    if name in _REGISTRY:
        raise ValueError(f"detector {name!r} already registered")
    _REGISTRY[name] = factory


def make_detector(name: str = "reference", **params) -> Detector:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown detector {name!r}; known: {sorted(_REGISTRY)}") from None
    det = factory(**params)
    if not getattr(det, "deterministic", False):
        raise ValueError(f"detector {name!r} does not declare determinism")
    return det


def registered_detectors() -> list[str]:
    return sorted(_REGISTRY)


register_detector("reference", lambda **kw: ReferenceDetector(DetectorConfig(**kw)))
