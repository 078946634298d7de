"""Predefined and adaptive search missions with structured logging.

Missions run on simulated time: sampling legs are flown at 1 m/s and
transit legs at 3 m/s, so logs are reproducible byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aoscore import IntegralImage, SamplingPlan, export_integral, integrate, write_pgm
from .detect import Detection, ReferenceDetector
from .evaluation import CONFIDENCE_FLOOR, iou, person_boxes
from .plan import (PlannerConfig, ProbabilityGrid, confirm, next_cell, resample_plan,
                   scan_plan_for_cell)
from . import rng
from .scenesim import (ForestScene, PoseNoiseModel, WarmClutter, capture, generate_forest,
                       random_clutter)
from .terrain import CameraIntrinsics, ElevationModel, GeoOrigin, Pose, ground_height

STOP_FOUND = "found"
STOP_BUDGET = "budget"
STOP_COVERAGE = "coverage"
STOP_COMPLETE = "complete"


@dataclass(frozen=True)
class MissionConfig:
    """Flight and output settings shared by both executors.

    Attributes:
        mission_id: Identifier written into every message.
        intrinsics: Camera model.
        noise: Pose-noise model (``None`` for perfect poses).
        segment_length: Predefined-search segment length (m).
        spacing: Sample spacing (m).
        altitude_agl: Flight height above ground (m).
        min_residue: Residue segments shorter than this are merged into
            the previous segment (m).
        sample_speed: Speed while sampling (m/s).
        transit_speed: Speed between apertures (m/s).
        yaw_deg: Constant camera yaw.
        out_dir: Where rasters and crops are written (``None``: keep in memory).
        geo_origin: Optional anchor for latitude/longitude in messages.
        verbose: Emit messages for unconfirmed detections too.
        crop_size: Side of the detection-message crop (px).
        keep_images: Keep integrals and labels on the log for evaluation.
    """

    mission_id: str = "mission"
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    noise: PoseNoiseModel | None = None
    segment_length: float = 30.0
    spacing: float = 1.0
    altitude_agl: float = 35.0
    min_residue: float = 2.0
    sample_speed: float = 1.0
    transit_speed: float = 3.0
    yaw_deg: float = 0.0
    out_dir: str | None = None
    geo_origin: GeoOrigin | None = None
    verbose: bool = False
    crop_size: int = 64
    keep_images: bool = False


def _r(v: float) -> float:
    return float(round(float(v), 6))


def _det_record(d: Detection) -> dict:
    return {"bbox": list(d.bbox), "confidence": _r(d.confidence),
            "world": [_r(v) for v in d.world_center], "area_px": d.area_px}


@dataclass
class MissionLog:
    """Ordered mission events plus totals.

    ``images`` and ``labels`` (simulation ground truth) are only filled when
    ``MissionConfig.keep_images`` is set and are not serialized.
    """

    mission_id: str
    events: list[dict] = field(default_factory=list)
    path_length_m: float = 0.0
    flight_time_s: float = 0.0
    cells_visited: int = 0
    stop_reason: str | None = None
    messages: list[dict] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    images: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    detections: dict = field(default_factory=dict)

    def add(self, kind: str, **payload) -> dict:
        ev = {"t": _r(self.flight_time_s), "kind": kind, **payload}
        self.events.append(ev)
        return ev

    def fly(self, length: float, speed: float) -> None:
        self.path_length_m += length
        self.flight_time_s += length / speed

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    @property
    def totals(self) -> dict:
        return {"path_length_m": _r(self.path_length_m),
                "flight_time_s": _r(self.flight_time_s),
                "cells_visited": self.cells_visited, "stop_reason": self.stop_reason}

    def to_jsonl(self) -> str:
        lines = [json.dumps(e, sort_keys=True) for e in self.events]
        lines.append(json.dumps({"kind": "summary", "mission_id": self.mission_id,
                                 **self.totals}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_jsonl())
        return path


class _Runner:
    """State shared by the executors: clock, sample counter, outputs."""

    def __init__(self, scene, dem, detector, cfg: MissionConfig):
        self.scene, self.dem, self.detector, self.cfg = scene, dem, detector, cfg
        self.log = MissionLog(cfg.mission_id)
        self.sample_index = 0
        self.n_images = 0
        self.out = Path(cfg.out_dir) if cfg.out_dir else None
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)

    def transit(self, start, end, **payload) -> None:
        d = math.hypot(end[0] - start[0], end[1] - start[1])
        if d > 0:
            self.log.add("transit", start=[_r(start[0]), _r(start[1])],
                         end=[_r(end[0]), _r(end[1])], length_m=_r(d), **payload)
            self.log.fly(d, self.cfg.transit_speed)

    def sample(self, poses, length: float):
        """Fly a sampling leg; returns the captured frames."""
        frames = capture(self.scene, poses, self.cfg.intrinsics, self.dem, self.cfg.noise,
                         first_index=self.sample_index)
        step = length / max(len(poses) - 1, 1) if len(poses) > 1 else 0.0
        for k, f in enumerate(frames):
            if k:
                self.log.fly(step, self.cfg.sample_speed)
            mp = f.measured_pose
            self.log.add("sample", index=self.sample_index + k,
                         measured_pose=[_r(v) for v in mp.as_tuple()[:4]])
        if len(poses) <= 1 and length > 0:
            self.log.fly(length, self.cfg.sample_speed)
        self.sample_index += len(frames)
        return frames

    def integrate_detect(self, frames, virtual_pose: Pose, role: str):
        img = integrate(frames, self.dem, virtual_pose, self.cfg.intrinsics)
        image_id = f"{role}_{self.n_images:03d}"
        self.n_images += 1
        payload = {"image": image_id, "frames": len(frames),
                   "virtual_pose": [_r(v) for v in virtual_pose.as_tuple()[:4]],
                   "valid_px": int(img.valid.sum())}
        if self.out:
            pgm, side = export_integral(img, self.out / image_id)
            payload["raster"] = pgm.name
            self.log.artifacts += [pgm.name, side.name]
        self.log.add("integrate", **payload)
        dets = list(self.detector(img))
        self.log.add("detect", image=image_id, detections=[_det_record(d) for d in dets])
        self.log.detections[image_id] = dets
        if self.cfg.keep_images:
            self.log.images[image_id] = img
            if len(self.scene.person_radii):
                self.log.labels[image_id] = person_boxes(self.scene, img, self.dem, frames,
                                                         image_id)
            else:
                self.log.labels[image_id] = []
        return image_id, img, dets

    def message(self, image_id: str, img: IntegralImage, det: Detection, verdict: str,
                confirmed: bool) -> dict:
        msg = emit_detection_message(self.cfg.mission_id, self.log.flight_time_s, det, verdict,
                                     img, image_id, self.cfg.geo_origin, self.out,
                                     self.cfg.crop_size, len(self.log.messages), confirmed)
        self.log.messages.append(msg)
        if msg.get("crop") and self.out:
            self.log.artifacts.append(msg["crop"])
        return msg


def _check_inside(dem: ElevationModel, pts) -> None:
    for x, y in pts:
        if not dem.contains(x, y):
            raise ValueError(f"waypoint ({x}, {y}) lies outside the DEM footprint")


def split_polyline(waypoints, segment_length: float = 30.0, min_residue: float = 2.0):
    """Arc-length intervals ``(start, end)`` of the predefined-search segments."""
    pts = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    total = float(np.hypot(*np.diff(pts, axis=0).T).sum()) if len(pts) > 1 else 0.0
    if not total > 0:
        raise ValueError("polyline length must be positive")
    edges = list(np.arange(0.0, total, segment_length))
    segs = [(s, min(s + segment_length, total)) for s in edges]
    segs = [s for s in segs if s[1] - s[0] > 1e-9]
    if len(segs) > 1 and segs[-1][1] - segs[-1][0] < min_residue:
        last = segs.pop()
        segs[-1] = (segs[-1][0], last[1])
    return segs, total


def _point_at(pts: np.ndarray, cum: np.ndarray, s: float) -> tuple[float, float]:
    k = int(np.searchsorted(cum, s, side="right") - 1)
    k = min(max(k, 0), len(pts) - 2)
    seg = cum[k + 1] - cum[k]
    t = 0.0 if seg == 0 else (s - cum[k]) / seg
    p = pts[k] + t * (pts[k + 1] - pts[k])
    return float(p[0]), float(p[1])


def run_predefined(waypoints, scene: ForestScene, dem: ElevationModel, detector=None,
                   cfg: MissionConfig | None = None) -> MissionLog:
    """Sample along a polyline, integrating every 30 m segment.

    Samples sit at arc lengths ``start + spacing * (j + 1/2)`` inside each
    segment. Each integral is rendered from a nadir virtual camera above the
    segment's arc-length midpoint.

    Raises:
        ValueError: Empty polyline or a waypoint outside the DEM.
    """
    cfg = cfg or MissionConfig()
    detector = detector or ReferenceDetector()
    pts = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    _check_inside(dem, pts)
    segs, total = split_polyline(pts, cfg.segment_length, cfg.min_residue)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    run = _Runner(scene, dem, detector, cfg)
    log = run.log
    log.add("start", mode="predefined", path_length_m=_r(total), segments=len(segs))
    prev_end = 0.0
    for k, (s0, s1) in enumerate(segs):
        n = max(1, int(round((s1 - s0) / cfg.spacing)))
        arcs = [min(s0 + cfg.spacing * (j + 0.5), s1) for j in range(n)]
        poses = []
        for s in arcs:
            x, y = _point_at(pts, cum, s)
            poses.append(Pose(x, y, ground_height(dem, x, y) + cfg.altitude_agl, cfg.yaw_deg))
        # the leg between consecutive segments is flown at sampling speed too
        gap = arcs[0] - prev_end
        if gap > 0:
            log.fly(gap, cfg.sample_speed)
        log.add("segment", index=k, start_m=_r(s0), end_m=_r(s1), samples=n)
        frames = run.sample(poses, arcs[-1] - arcs[0])
        prev_end = arcs[-1]
        cx, cy = _point_at(pts, cum, 0.5 * (s0 + s1))
        vp = Pose(cx, cy, ground_height(dem, cx, cy) + cfg.altitude_agl, cfg.yaw_deg)
        image_id, img, dets = run.integrate_detect(frames, vp, "segment")
        if cfg.verbose:
            for d in dets:
                if d.confidence >= 0.10:
                    run.message(image_id, img, d, "unconfirmed", False)
    if total > prev_end:
        log.fly(total - prev_end, cfg.sample_speed)
    log.stop_reason = STOP_COMPLETE
    log.add("stop", reason=STOP_COMPLETE, **{k: v for k, v in log.totals.items()
                                              if k != "stop_reason"})
    return log


def run_adaptive(grid: ProbabilityGrid, scene: ForestScene, dem: ElevationModel,
                 detector=None, planner: PlannerConfig | None = None,
                 cfg: MissionConfig | None = None, start=None,
                 resample: bool = True) -> MissionLog:
    """Potential-field search with re-sampling and confirmation.

    With ``resample=False`` every cell is scanned once and nothing is
    confirmed (the single-pass baseline).

    The grid is updated in place (visited cells are zeroed). The budget is
    checked before every flight leg, including re-sampling legs. The mission
    stops on the first confirmed find, when the budget is used up, or when
    every initially positive cell has been scanned.
    """
    cfg = cfg or MissionConfig()
    planner = planner or PlannerConfig()
    detector = detector or ReferenceDetector()
    run = _Runner(scene, dem, detector, cfg)
    log = run.log
    pos = tuple(start) if start is not None else grid.origin
    log.add("start", mode="adaptive", position=[_r(pos[0]), _r(pos[1])],
            budget_m=None if math.isinf(planner.max_path_length) else planner.max_path_length)

    def over_budget() -> bool:
        return log.path_length_m >= planner.max_path_length

    def fly_plan(plan: SamplingPlan, role: str, **payload):
        nonlocal pos
        entry = (plan.poses[0].x, plan.poses[0].y)
        run.transit(pos, entry, **payload)
        frames = run.sample(plan.poses, plan.path_length)
        last = plan.poses[-1]
        pos = (last.x, last.y)
        return run.integrate_detect(frames, plan.virtual_pose, role)

    reason = None
    while reason is None:
        cell = next_cell(grid, pos, planner)
        if cell is None:
            reason = STOP_COVERAGE
            break
        if over_budget():
            reason = STOP_BUDGET
            break
        plan = scan_plan_for_cell(grid, cell, pos, planner, dem)
        log.add("cell", cell=list(cell), heading=_r(plan.heading_deg),
                budget_used_m=_r(log.path_length_m))
        image_id, img, dets = fly_plan(plan, "cell", cell=list(cell))
        grid.mark_visited(cell)
        log.cells_visited += 1
        weak = [d for d in dets if d.confidence >= planner.weak_threshold] if resample else []
        for k, det in enumerate(weak):
            if over_budget():
                reason = STOP_BUDGET
                break
            if cfg.verbose:
                run.message(image_id, img, det, "unconfirmed", False)
            rplan = resample_plan(det.world_center, plan.heading_deg, planner, dem)
            log.add("resample", image=image_id, detection=k, heading=_r(rplan.heading_deg),
                    center=[_r(det.world_center[0]), _r(det.world_center[1])],
                    budget_used_m=_r(log.path_length_m))
            rid, rimg, rdets = fly_plan(rplan, "resample")
            rec = confirm(det, rdets, planner)
            log.add("confirm", image=image_id, detection=k, resample_image=rid,
                    c0=_r(rec.initial_confidence), c1=_r(rec.resampled_confidence),
                    delta=_r(rec.delta), verdict=rec.verdict)
            if rec.confirmed:
                run.message(rid, rimg, rec.matched, rec.verdict, True)
                reason = STOP_FOUND
                break
    log.stop_reason = reason
    log.add("stop", reason=reason, **{k: v for k, v in log.totals.items()
                                      if k != "stop_reason"})
    return log


def crop_window(pixels: np.ndarray, cx: float, cy: float, size: int = 64) -> np.ndarray:
    """``size x size`` window centred on ``(cx, cy)``, NaN-padded at the borders."""
    h, w = pixels.shape
    x0 = int(math.floor(cx)) - size // 2
    y0 = int(math.floor(cy)) - size // 2
    out = np.full((size, size), np.nan)
    xa, ya = max(x0, 0), max(y0, 0)
    xb, yb = min(x0 + size, w), min(y0 + size, h)
    if xa < xb and ya < yb:
        out[ya - y0:yb - y0, xa - x0:xb - x0] = pixels[ya:yb, xa:xb]
    return out


def emit_detection_message(mission_id: str, timestamp_s: float, det: Detection, verdict: str,
                           image: IntegralImage | None = None, image_id: str = "",
                           geo_origin: GeoOrigin | None = None, out_dir=None,
                           crop_size: int = 64, seq: int = 0, confirmed: bool = True) -> dict:
    """Structured record for one detection; writes the crop PGM when ``out_dir`` is set."""
    x, y = det.world_center[0], det.world_center[1]
    msg = {"mission_id": mission_id, "seq": seq, "timestamp_s": _r(timestamp_s),
           "position": [_r(x), _r(y)], "confidence": _r(det.confidence), "verdict": verdict,
           "confirmed": bool(confirmed), "image": image_id, "crop": None}
    if geo_origin is not None:
        lat, lon = geo_origin.to_geo(x, y)
        msg["lat"], msg["lon"] = float(round(lat, 8)), float(round(lon, 8))
    if image is not None and out_dir is not None:
        bx0, by0, bx1, by1 = det.bbox
        crop = crop_window(image.pixels, 0.5 * (bx0 + bx1), 0.5 * (by0 + by1), crop_size)
        name = f"crop_{seq:03d}_{image_id}.pgm"
        write_pgm(Path(out_dir) / name, crop)
        msg["crop"] = name
    return msg


def messages_jsonl(messages) -> str:
    return "".join(json.dumps(m, sort_keys=True) + "\n" for m in messages)


# --------------------------------------------------------------------------
# Confirmation experiment: adaptive re-sampling versus a single pass
# --------------------------------------------------------------------------

@dataclass
class ConfirmationScenario:
    """A row of 30 m cells with one person and warm clutter in every cell."""

    scene: ForestScene
    grid: ProbabilityGrid
    dem: ElevationModel
    noise: PoseNoiseModel | None
    name: str = ""


def confirmation_suite(n_scenes: int = 50, density: float = 0.5, cells: int = 2,
                       clutter_per_cell: int = 2, base_seed: int = 0,
                       noise: bool = True) -> list[ConfirmationScenario]:
    """Fixed scenes for comparing confirmed and single-pass decisions."""
    size = 30.0
    region = (0.0, 0.0, cells * size, size)
    dem = ElevationModel.flat(-25.0, -25.0, cells * size + 25.0, size + 25.0)
    out = []
    for k in range(n_scenes):
        seed = base_seed + k
        gen = rng.generator(seed, "confirmation-suite")
        cell = int(gen.integers(cells))
        person = (float(gen.uniform(3.0, 27.0)) + cell * size, float(gen.uniform(3.0, 27.0)))
        clutter = []
        for c in range(cells):
            for bar in random_clutter((0.0, 0.0, size, size), clutter_per_cell,
                                      rng.derive_seed(seed, "clutter", c), margin=3.0):
                clutter.append(WarmClutter(bar.x + c * size, bar.y, bar.height, bar.length,
                                           bar.width, bar.heading_deg))
        scene = generate_forest(region, density, seed=seed, persons=[person], clutter=clutter)
        grid = ProbabilityGrid(np.full((1, cells), 1.0 / cells), size, (0.0, 0.0))
        model = PoseNoiseModel(seed=seed) if noise else None
        out.append(ConfirmationScenario(scene, grid, dem, model, f"c{seed:03d}"))
    return out


def _is_person(log: MissionLog, image_id: str, det: Detection) -> bool:
    return any(iou(det.bbox, lab.bbox) >= 0.01 for lab in log.labels.get(image_id, []))


@dataclass
class ConfirmationOutcome:
    """Per-scenario result of :func:`confirmation_experiment`."""

    name: str
    person_deltas: list[float]
    clutter_deltas: list[float]
    adaptive_correct: bool
    single_pass_correct: bool
    stop_reason: str


def confirmation_experiment(suite, detector=None, planner: PlannerConfig | None = None,
                            intrinsics: CameraIntrinsics | None = None):
    """Run every scenario twice: adaptively and as a single pass.

    A detection counts as a person when its box overlaps a ground-truth box
    of the same integral (IoU >= 0.01); every other detection counts as
    clutter. The adaptive decision is correct when the mission stops on a
    confirmed person. The single-pass decision scans every cell once and is
    correct when some detection at or above the confidence floor is a person
    and none of the others reaches the floor.
    """
    planner = planner or PlannerConfig()
    intr = intrinsics or CameraIntrinsics()
    results = []
    for sc in suite:
        cfg = MissionConfig(mission_id=sc.name, intrinsics=intr, noise=sc.noise,
                            altitude_agl=planner.altitude_agl, keep_images=True)
        log = run_adaptive(sc.grid.copy(), sc.scene, sc.dem, detector, planner, cfg,
                           start=sc.grid.origin)
        person_d, clutter_d = [], []
        correct = False
        for ev in log.of_kind("confirm"):
            weak = [d for d in log.detections[ev["image"]]
                    if d.confidence >= planner.weak_threshold]
            is_person = _is_person(log, ev["image"], weak[ev["detection"]])
            (person_d if is_person else clutter_d).append(ev["delta"])
            if ev["verdict"] == "confirmed-true":
                correct = is_person
        base = run_adaptive(sc.grid.copy(), sc.scene, sc.dem, detector, planner, cfg,
                            start=sc.grid.origin, resample=False)
        hits = [(img, d) for img, dets in base.detections.items() for d in dets
                if d.confidence >= CONFIDENCE_FLOOR]
        kinds = [_is_person(base, img, d) for img, d in hits]
        results.append(ConfirmationOutcome(sc.name, person_d, clutter_d, correct,
                                           any(kinds) and all(kinds), log.stop_reason))
    return results
