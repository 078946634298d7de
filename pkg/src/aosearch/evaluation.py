"""Detection metrics, person-level outcomes and the AP(N) hyperbola fit."""

from __future__ import annotations

import csv
import io
import math
from importlib import resources
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .aoscore import IntegralImage, SamplingPlan, integrate, plan_line_sa
from .detect import Detection, ReferenceDetector
from .scenesim import (ForestScene, PoseNoiseModel, capture, generate_forest, line_of_sight,
                       random_persons)
from .terrain import (CameraIntrinsics, ElevationModel, Pose, cast_rays, ground_height,
                      pixel_rays, project_points)

CONFIDENCE_FLOOR = 0.10


@dataclass(frozen=True)
class GroundTruthLabel:
    bbox: tuple[int, int, int, int]
    person_id: int
    image_id: object = 0


def iou(box_a, box_b) -> float:
    """Intersection over union of two ``(x_min, y_min, x_max, y_max)`` boxes."""
    ax0, ay0, ax1, ay1 = box_a
    bx0, by0, bx1, by1 = box_b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


@dataclass(frozen=True)
class APResult:
    """``ap`` is ``None`` when there are no labels (not applicable)."""

    ap: float | None
    tp: int
    fp: int
    n_labels: int
    n_detections: int


def _pooled(detections: dict) -> list[tuple[object, Detection]]:
    pooled = [(img, d) for img in sorted(detections, key=_id_key) for d in detections[img]]
    pooled.sort(key=lambda t: (-t[1].confidence, _id_key(t[0]), t[1].bbox[0]))
    return pooled


def _id_key(img):
    return (str(type(img)), img)


def match_detections(detections: dict, labels: dict, iou_threshold: float):
    """Greedy confidence-ordered matching; returns ``[(image, det, tp), ...]``."""
    used = {img: np.zeros(len(labels.get(img, ())), dtype=bool) for img in labels}
    out = []
    for img, det in _pooled(detections):
        best, best_iou = -1, iou_threshold
        for j, lab in enumerate(labels.get(img, ())):
            if used[img][j]:
                continue
            o = iou(det.bbox, lab.bbox)
            if o >= best_iou and (best < 0 or o > best_iou):
                best, best_iou = j, o
        if best >= 0:
            used[img][best] = True
        out.append((img, det, best >= 0))
    return out


def all_point_ap(tp_flags, n_labels: int) -> float:
    """Area under the all-point interpolated precision/recall curve."""
    tp_flags = np.asarray(tp_flags, dtype=bool)
    if n_labels == 0:
        raise ValueError("AP is undefined without labels")
    if tp_flags.size == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_labels
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def average_precision(detections: dict, labels: dict, iou_threshold: float = 0.25,
                      confidence_floor: float = CONFIDENCE_FLOOR) -> APResult:
    """Pooled AP over images plus TP/FP counts above the confidence floor.

    Args:
        detections: ``{image_id: [Detection, ...]}``.
        labels: ``{image_id: [GroundTruthLabel, ...]}``.
        iou_threshold: Minimum IoU for a true positive.
        confidence_floor: Detections below it are not counted in TP/FP.
    """
    matched = match_detections(detections, labels, iou_threshold)
    n_labels = sum(len(v) for v in labels.values())
    flags = [m[2] for m in matched]
    kept = [m for m in matched if m[1].confidence >= confidence_floor]
    tp = sum(1 for m in kept if m[2])
    ap = all_point_ap(flags, n_labels) if n_labels else None
    return APResult(ap, tp, len(kept) - tp, n_labels, len(matched))


def persons_found(detections: dict, labels: dict, iou_threshold: float = 0.01,
                  confidence_floor: float = CONFIDENCE_FLOOR) -> tuple[int, int]:
    """``(PF, PI)``: distinct persons hit at least once, detections outside all labels."""
    found = set()
    wrong = 0
    for img, dets in detections.items():
        labs = labels.get(img, ())
        for d in dets:
            if d.confidence < confidence_floor:
                continue
            hits = [lab.person_id for lab in labs if iou(d.bbox, lab.bbox) >= iou_threshold]
            if hits:
                found.update(hits)
            else:
                wrong += 1
    return len(found), wrong


# --------------------------------------------------------------------------
# ground-truth boxes for simulated persons
# --------------------------------------------------------------------------

def apparent_positions(xy, frames, dem: ElevationModel, scene: ForestScene | None = None,
                       radius: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame apparent ground positions of a point after registration.

    The point is projected into each frame with its true pose and the pixel
    is traced back to the DEM with the measured pose. Returns ``(positions,
    weights)`` for the frames that have the point in view. With ``scene``
    the weight is the un-occluded fraction of a disk of ``radius`` around the
    point; otherwise every weight is 1.
    """
    p = np.array([xy[0], xy[1], ground_height(dem, xy[0], xy[1])])
    probes = None
    if scene is not None:
        ang = np.linspace(0.0, 2.0 * math.pi, 8, endpoint=False)
        ring = np.column_stack([p[0] + 0.7 * radius * np.cos(ang),
                                p[1] + 0.7 * radius * np.sin(ang)])
        probes = np.vstack([p, np.column_stack([ring, ground_height(dem, ring[:, 0],
                                                                    ring[:, 1])])])
    seen, weights = [], []
    for f in frames:
        uv, ok = project_points(f.true_pose, f.intrinsics, p)
        if not ok[0]:
            continue
        if f.measured_pose == f.true_pose:
            g = p
        else:
            g, hit = cast_rays(f.measured_pose, pixel_rays(f.measured_pose, f.intrinsics, uv),
                               dem)
            if not hit[0]:
                continue
            g = g[0]
        seen.append(g)
        weights.append(1.0 if probes is None else
                       float(line_of_sight(scene, f.true_pose.position, probes, dem).mean()))
    return np.asarray(seen).reshape(-1, 3), np.asarray(weights)


def apparent_center(xy, frames, dem: ElevationModel, scene: ForestScene | None = None,
                    radius: float = 0.0) -> np.ndarray | None:
    """Visibility-weighted mean apparent position (``None`` when never in view)."""
    pos, w = apparent_positions(xy, frames, dem, scene, radius)
    if len(pos) == 0:
        return None
    if w.sum() <= 0:
        w = np.ones(len(pos))
    return np.average(pos, axis=0, weights=w)


def person_boxes(scene: ForestScene, image: IntegralImage, dem: ElevationModel,
                 frames=None, image_id=0, dilate: int = 1, samples: int = 32,
                 union: bool = False):
    """Labels for persons whose apparent centre falls on a valid pixel.

    The box bounds the person disk projected into the virtual view, dilated
    by ``dilate`` pixels and clipped to the image. When ``frames`` are given
    the disk sits at the visibility-weighted mean of its apparent positions
    (plain mean if no frame sees it); with ``union=True`` the disks at every
    apparent position seen by some frame are boxed together instead.
    """
    n = image.intrinsics.resolution_px
    labels = []
    phi = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    unit = np.column_stack([np.cos(phi), np.sin(phi)])
    for pid, ((cx, cy), r) in enumerate(zip(scene.person_centers, scene.person_radii)):
        if frames is None:
            centres = np.array([[cx, cy]])
            mid = (cx, cy)
        else:
            pos, w = apparent_positions((cx, cy), frames, dem, scene, r)
            if len(pos) == 0:
                continue
            if w.sum() <= 0:
                w = np.ones(len(pos))
            mid = tuple(np.average(pos[:, :2], axis=0, weights=w))
            centres = pos[w > 0, :2] if union else np.array([mid])
        if not dem.contains(mid[0], mid[1]):
            continue
        cuv, cok = project_points(image.virtual_pose, image.intrinsics,
                                  [mid[0], mid[1], ground_height(dem, mid[0], mid[1])])
        if not cok[0] or image.counts[int(cuv[0, 1]), int(cuv[0, 0])] == 0:
            continue
        ring = (centres[:, None, :] + r * unit[None, :, :]).reshape(-1, 2)
        ring = ring[dem.contains(ring[:, 0], ring[:, 1])]
        pts = np.column_stack([ring, ground_height(dem, ring[:, 0], ring[:, 1])])
        uv, _ = project_points(image.virtual_pose, image.intrinsics, pts)
        uv = uv[np.isfinite(uv).all(axis=1)]
        x0 = max(0, int(math.floor(uv[:, 0].min())) - dilate)
        y0 = max(0, int(math.floor(uv[:, 1].min())) - dilate)
        x1 = min(n, int(math.ceil(uv[:, 0].max())) + dilate)
        y1 = min(n, int(math.ceil(uv[:, 1].max())) + dilate)
        if x0 < x1 and y0 < y1:
            labels.append(GroundTruthLabel((x0, y0, x1, y1), pid, image_id))
    return labels


# --------------------------------------------------------------------------
# AP(N) = a N / (b + N)
# --------------------------------------------------------------------------

class FitError(RuntimeError):
    """Curve fit failed; ``diagnostics`` holds the optimizer report."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ApCurveFit:
    a: float
    b: float
    mse: float
    penalty: float = 10.0
    n_points: int = 0

    def __call__(self, n):
        return ap_curve(n, self.a, self.b)


def ap_curve(n, a: float, b: float):
    n = np.asarray(n, dtype=np.float64)
    return a * n / (b + n)


def fit_ap_curve(points, penalty: float = 10.0, a_max: float = 1.2,
                 max_nfev: int = 2000) -> ApCurveFit:
    """Least-squares fit of ``AP(N) = aN/(b+N)`` with penalised under-estimation.

    Residuals where the curve lies below a data point are multiplied by
    ``penalty``. The reported MSE uses unweighted residuals.

    Raises:
        ValueError: Fewer than two points or a non-positive N.
        FitError: The optimizer did not converge.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise ValueError("need at least two (N, AP) points")
    n, ap = pts[:, 0], pts[:, 1]
    if (n <= 0).any():
        raise ValueError("N must be positive")

    def weights(p):
        r = ap - ap_curve(n, p[0], p[1])
        return np.where(r > 0, penalty, 1.0), r

    def resid(p):
        w, r = weights(p)
        return w * r

    def jac(p):
        # analytic derivatives; finite differences stall short of 1e-6 accuracy
        w, _ = weights(p)
        d = p[1] + n
        return -w[:, None] * np.column_stack([n / d, -p[0] * n / d ** 2])

    a0 = min(max(float(ap.max()), 1e-3), a_max)
    res = least_squares(resid, x0=[a0, 1.0], jac=jac,
                        bounds=([1e-12, 1e-12], [a_max, np.inf]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    if res.status <= 0:
        raise FitError("AP curve fit did not converge",
                       {"status": int(res.status), "message": res.message,
                        "nfev": int(res.nfev), "x": res.x.tolist()})
    a, b = (float(v) for v in res.x)
    mse = float(np.mean((ap - ap_curve(n, a, b)) ** 2))
    return ApCurveFit(a, b, mse, penalty, len(pts))


# --------------------------------------------------------------------------
# AP versus number of integrated samples
# --------------------------------------------------------------------------

@dataclass
class Scenario:
    """One scene with its aperture and pose-noise model."""

    scene: ForestScene
    plan: SamplingPlan
    noise: PoseNoiseModel | None
    dem: ElevationModel
    name: str = ""


def standard_suite(n_scenes: int = 50, density: float = 0.5, base_seed: int = 0,
                   noise: bool = True, sigma_xy: float = 2.0, person_spread: float = 5.0,
                   half_width: float = 50.0, clutter=()) -> list[Scenario]:
    """Fixed scenes: one person near the centre of a 30 m north-bound aperture."""
    region = (-half_width, -half_width, half_width, half_width)
    dem = ElevationModel.flat(-half_width - 10, -half_width - 10,
                              half_width + 10, half_width + 10, 0.0)
    plan = plan_line_sa((0.0, 0.0), 0.0)
    out = []
    for k in range(n_scenes):
        seed = base_seed + k
        persons = random_persons((-person_spread, -person_spread, person_spread, person_spread),
                                 1, seed)
        scene = generate_forest(region, density, seed=seed, persons=persons, clutter=clutter)
        model = PoseNoiseModel(sigma_xy=sigma_xy, seed=seed) if noise else None
        out.append(Scenario(scene, plan, model, dem, f"s{seed:03d}"))
    return out


@dataclass
class PipelineConfig:
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    detector: object = field(default_factory=ReferenceDetector)
    iou_threshold: float = 0.25


def sub_aperture_pose(plan: SamplingPlan, n: int, dem: ElevationModel) -> Pose:
    """Nadir virtual pose above the centre of the first ``n`` samples."""
    xy = np.array([(p.x, p.y) for p in plan.poses[:n]])
    cx, cy = (float(v) for v in xy.mean(axis=0))
    return Pose(cx, cy, ground_height(dem, cx, cy) + plan.altitude_agl, plan.poses[0].yaw)


def ap_vs_n_experiment(suite, n_values, cfg: PipelineConfig | None = None,
                       return_details: bool = False):
    """AP of integrals over the first ``N`` samples of every scenario.

    Returns a list of ``(N, APResult)``; with ``return_details`` also the
    per-image detections and labels keyed by ``N``.
    """
    cfg = cfg or PipelineConfig()
    n_values = [int(v) for v in n_values]
    per_n = {n: ({}, {}) for n in n_values}
    for sc in suite:
        if max(n_values) > len(sc.plan):
            raise ValueError("N exceeds the plan length")
        frames = capture(sc.scene, sc.plan.poses, cfg.intrinsics, sc.dem, sc.noise)
        for n in n_values:
            sub = frames[:n]
            vp = sub_aperture_pose(sc.plan, n, sc.dem)
            img = integrate(sub, sc.dem, vp, cfg.intrinsics)
            dets, labs = per_n[n]
            dets[sc.name] = list(cfg.detector(img))
            labs[sc.name] = person_boxes(sc.scene, img, sc.dem, sub, sc.name)
    rows = [(n, average_precision(*per_n[n], iou_threshold=cfg.iou_threshold))
            for n in n_values]
    return (rows, per_n) if return_details else rows


# --------------------------------------------------------------------------
# Defocus
# --------------------------------------------------------------------------

def second_moment(weights: np.ndarray, points: np.ndarray) -> float:
    """Weighted mean squared distance of ``points`` from their weighted centroid."""
    w = np.nan_to_num(np.asarray(weights, dtype=np.float64))
    pts = np.asarray(points, dtype=np.float64).reshape(w.shape + (-1,))
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have a positive sum")
    m = (w[..., None] * pts).sum(axis=tuple(range(w.ndim))) / total
    return float((w * ((pts - m) ** 2).sum(-1)).sum() / total)


def person_spread(scene: ForestScene, plan: SamplingPlan, dem: ElevationModel,
                  noise: PoseNoiseModel | None, intrinsics: CameraIntrinsics | None = None
                  ) -> float:
    """Spatial second moment (m^2) of the persons' signal in the integral.

    The scene is rendered twice, with and without its persons, under the
    same poses and sensor noise; the difference of the two integrals holds
    the persons' contribution alone. For one fully registered disk of radius
    ``r`` the moment is ``r^2 / 2``.
    """
    intr = intrinsics or CameraIntrinsics()
    empty = scene.with_changes(person_centers=np.zeros((0, 2)), person_radii=np.zeros(0))
    vp = plan.virtual_pose
    with_p = integrate(capture(scene, plan.poses, intr, dem, noise), dem, vp, intr)
    without = integrate(capture(empty, plan.poses, intr, dem, noise), dem, vp, intr)
    return second_moment(with_p.pixels - without.pixels, with_p.ground_points[..., :2])


def defocus_experiment(suite, sigmas=(0.0, 2.0), intrinsics: CameraIntrinsics | None = None):
    """Person spread per scenario for each horizontal pose-noise level.

    Only the horizontal channel is perturbed (height and yaw noise are off)
    and every level reuses the scenario's noise seed. Returns
    ``{name: [spread per sigma]}``.
    """
    out = {}
    for sc in suite:
        seed = sc.noise.seed if sc.noise is not None else 0
        out[sc.name] = [person_spread(sc.scene, sc.plan, sc.dem,
                                      PoseNoiseModel(sigma_xy=s, sigma_z=0.0, sigma_yaw_deg=0.0,
                                                     seed=seed), intrinsics)
                        for s in sigmas]
    return out


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

TAB1_COLUMNS = ("flight", "N", "AP", "TP", "FP")
TAB2_COLUMNS = ("flight", "path_length_m", "segments", "PF", "PI", "persons")


def metrics_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def bundled_points_path():
    """Path of the packaged ``tab1_all.csv`` (AP of all test flights versus N)."""
    return resources.files("aosearch") / "data" / "tab1_all.csv"


def read_points_csv(text: str) -> list[tuple[float, float]]:
    """``N,AP`` rows (a header line is allowed)."""
    pts = []
    for row in csv.reader(io.StringIO(text)):
        if not row or not row[0].strip() or row[0].strip().startswith("#"):
            continue
        try:
            pts.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            if pts:
                raise ValueError(f"bad points row: {row!r}") from None
    return pts
