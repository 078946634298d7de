"""Synthetic-aperture sampling plans and integral images.

An integral image is rendered from a virtual nadir camera. Each virtual
pixel is traced to the DEM, the resulting ground point is projected into
every recorded frame with that frame's measured pose, and the bilinear
samples are averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels, rng
from .scenesim import ForestScene, line_of_sight
from .terrain import (CameraIntrinsics, ElevationModel, Pose, camera_row, ground_height,
                      project_points, view_ground_points)


@dataclass(frozen=True)
class SamplingPlan:
    """Ordered camera poses of one synthetic aperture.

    ``center`` is the geometric centre of the aperture in the ground plane;
    ``length`` is the nominal aperture length (line) or area width (grid).
    """

    kind: str
    poses: tuple[Pose, ...]
    spacing: float
    length: float
    center: tuple[float, float]
    heading_deg: float = 0.0
    altitude_agl: float = 35.0
    extent: tuple[float, float] = (0.0, 0.0)
    virtual_z: float = 35.0

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def virtual_pose(self) -> Pose:
        """Nadir pose above the aperture centre, at the plans' yaw."""
        yaw = self.poses[0].yaw if self.poses else 0.0
        return Pose(self.center[0], self.center[1], self.virtual_z, yaw)

    @property
    def endpoints(self) -> tuple[tuple[float, float], tuple[float, float]]:
        a, b = self.poses[0], self.poses[-1]
        return (a.x, a.y), (b.x, b.y)

    @property
    def path_length(self) -> float:
        xy = np.array([(p.x, p.y) for p in self.poses])
        return float(np.hypot(*np.diff(xy, axis=0).T).sum()) if len(xy) > 1 else 0.0

    def head(self, n: int) -> "SamplingPlan":
        """The first ``n`` samples, keeping the original virtual view."""
        return SamplingPlan(self.kind, self.poses[:n], self.spacing, self.length, self.center,
                            self.heading_deg, self.altitude_agl, self.extent, self.virtual_z)


def _ground(dem: ElevationModel | None, x: float, y: float) -> float:
    return 0.0 if dem is None else ground_height(dem, x, y)


def plan_line_sa(center, heading_deg: float, length_m: float = 30.0, spacing_m: float = 1.0,
                 altitude_agl_m: float = 35.0, dem: ElevationModel | None = None,
                 yaw_deg: float = 0.0) -> SamplingPlan:
    """Straight 1D aperture centred on ``center``.

    ``max(1, round(length / spacing))`` poses spaced ``spacing_m`` apart along
    the compass ``heading_deg`` (0 = north, 90 = east). The camera keeps a
    constant yaw. Each pose flies ``altitude_agl_m`` above the local ground.
    """
    if not spacing_m > 0 or length_m < spacing_m:
        raise ValueError("need length >= spacing > 0")
    n = max(1, int(round(length_m / spacing_m)))
    h = math.radians(heading_deg)
    ux, uy = math.sin(h), math.cos(h)
    cx, cy = float(center[0]), float(center[1])
    poses = []
    for k in range(n):
        s = (k - 0.5 * (n - 1)) * spacing_m
        x, y = cx + s * ux, cy + s * uy
        poses.append(Pose(x, y, _ground(dem, x, y) + altitude_agl_m, yaw_deg))
    return SamplingPlan("line", tuple(poses), float(spacing_m), float(length_m), (cx, cy),
                        float(heading_deg), float(altitude_agl_m), (float(length_m), 0.0),
                        _ground(dem, cx, cy) + altitude_agl_m)


def plan_grid_sa(area, spacing=(1.0, 3.0), altitude_agl_m: float = 35.0,
                 dem: ElevationModel | None = None, yaw_deg: float = 0.0) -> SamplingPlan:
    """Boustrophedon 2D aperture over ``area = (x_min, y_min, x_max, y_max)``.

    Rows run east-west at ``spacing[0]`` with ``max(1, round(width / sx))``
    samples; rows are ``spacing[1]`` apart with ``round(height / sy) + 1``
    rows (one row when the area is no taller than the row spacing).
    """
    x0, y0, x1, y1 = (float(v) for v in area)
    sx, sy = (float(v) for v in spacing)
    w, hgt = x1 - x0, y1 - y0
    if not (sx > 0 and sy > 0 and w > 0 and hgt > 0):
        raise ValueError("area and spacing must be positive")
    nx = max(1, int(round(w / sx)))
    ny = int(round(hgt / sy)) + 1 if hgt > sy else 1
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    xs = cx + (np.arange(nx) - 0.5 * (nx - 1)) * sx
    ys = cy + (np.arange(ny) - 0.5 * (ny - 1)) * sy
    poses = []
    for j, y in enumerate(ys):
        row = xs if j % 2 == 0 else xs[::-1]
        for x in row:
            poses.append(Pose(float(x), float(y), _ground(dem, x, y) + altitude_agl_m, yaw_deg))
    return SamplingPlan("grid", tuple(poses), sx, w, (cx, cy), 90.0, float(altitude_agl_m),
                        (w, hgt), _ground(dem, cx, cy) + altitude_agl_m)


@dataclass
class IntegralImage:
    """Averaged reprojection; invalid pixels (``counts == 0``) hold NaN."""

    pixels: np.ndarray
    counts: np.ndarray
    virtual_pose: Pose
    intrinsics: CameraIntrinsics
    ground_points: np.ndarray
    n_frames: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return self.counts > 0

    @property
    def footprint(self) -> np.ndarray:
        """World ``(x, y)`` of the four image corners (NaN where the ray missed)."""
        n = self.intrinsics.resolution_px
        g = self.ground_points
        return np.array([g[0, 0, :2], g[0, n - 1, :2], g[n - 1, n - 1, :2], g[n - 1, 0, :2]])

    def world_at(self, u: float, v: float) -> np.ndarray:
        """Ground point under continuous pixel ``(u, v)`` (nearest pixel centre)."""
        n = self.intrinsics.resolution_px
        c = min(max(int(math.floor(u)), 0), n - 1)
        r = min(max(int(math.floor(v)), 0), n - 1)
        return self.ground_points[r, c]


def _frame_order(frames) -> list[int]:
    """Canonical order so that the float sum does not depend on input order."""
    keys = [f.measured_pose.as_tuple() for f in frames]
    order = sorted(range(len(frames)), key=lambda i: keys[i])
    out = []
    i = 0
    while i < len(order):
        j = i + 1
        while j < len(order) and keys[order[j]] == keys[order[i]]:
            j += 1
        group = order[i:j]
        if len(group) > 1:
            group.sort(key=lambda k: frames[k].pixels.tobytes())
        out.extend(group)
        i = j
    return out


def integrate(frames, dem: ElevationModel, virtual_pose: Pose,
              intrinsics: CameraIntrinsics | None = None,
              ground_points: tuple[np.ndarray, np.ndarray] | None = None) -> IntegralImage:
    """Integral image of ``frames`` seen from ``virtual_pose``.

    Args:
        frames: Thermal frames; their ``measured_pose`` is used for
            registration and their pixels are never modified.
        dem: Focal surface.
        virtual_pose: Pose of the virtual camera.
        intrinsics: Virtual camera; defaults to that of the first frame.
        ground_points: Optional precomputed ``view_ground_points`` result
            for ``virtual_pose``.

    Raises:
        ValueError: If ``frames`` is empty or the frames differ in size.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("integrate needs at least one frame")
    intr = intrinsics or frames[0].intrinsics
    fint = frames[0].intrinsics
    if any(f.intrinsics != fint or f.pixels.shape != frames[0].pixels.shape for f in frames):
        raise ValueError("all frames must share intrinsics")
    if ground_points is None:
        ground_points = view_ground_points(virtual_pose, intr, dem)
    ground, valid = ground_points
    order = _frame_order(frames)
    stack = np.stack([frames[i].pixels for i in order]).astype(np.float32, copy=False)
    cams = np.stack([camera_row(frames[i].measured_pose) for i in order])
    sums, counts = kernels.integrate_frames(ground, valid, stack, cams,
                                            fint.focal_px, fint.center_px)
    n = intr.resolution_px
    counts = counts.reshape(n, n)
    with np.errstate(invalid="ignore", divide="ignore"):
        pixels = np.where(counts > 0, sums.reshape(n, n) / counts, np.nan)
    return IntegralImage(pixels, counts, virtual_pose, intr, ground, len(frames))


def estimate_visibility(scene: ForestScene, plan: SamplingPlan, dem: ElevationModel,
                        threshold: float = 0.0, intrinsics: CameraIntrinsics | None = None,
                        probes_per_person: int = 64, seed: int = 0) -> float:
    """Monte Carlo fraction of person-disk ground points seen by the plan.

    A probe counts as visible when it is inside the frame and un-occluded in
    at least ``max(1, ceil(threshold * len(plan)))`` poses of the plan.
    Returns 1.0 for a scene without persons.
    """
    if len(plan) == 0:
        raise ValueError("plan is empty")
    if len(scene.person_radii) == 0:
        return 1.0
    intr = intrinsics or CameraIntrinsics()
    gen = rng.generator(seed, "visibility")
    probes = []
    for (cx, cy), r in zip(scene.person_centers, scene.person_radii):
        rho = r * np.sqrt(gen.uniform(0.0, 1.0, probes_per_person))
        phi = gen.uniform(0.0, 2.0 * math.pi, probes_per_person)
        probes.append(np.column_stack([cx + rho * np.cos(phi), cy + rho * np.sin(phi)]))
    xy = np.concatenate(probes)
    pts = np.column_stack([xy, ground_height(dem, xy[:, 0], xy[:, 1])])
    seen = np.zeros(len(pts), dtype=np.int64)
    for pose in plan.poses:
        _, inframe = project_points(pose, intr, pts)
        clear = np.zeros(len(pts), dtype=bool)
        if inframe.any():
            clear[inframe] = line_of_sight(scene, pose.position, pts[inframe], dem)
        seen += clear
    need = max(1, math.ceil(threshold * len(plan)))
    return float(np.mean(seen >= need))


# --------------------------------------------------------------------------
# raster export
# --------------------------------------------------------------------------

def to_u16(pixels: np.ndarray) -> np.ndarray:
    """``round(pixel * 65535)``, with invalid (NaN) pixels written as 0."""
    p = np.nan_to_num(np.clip(pixels, 0.0, 1.0), nan=0.0)
    return np.rint(p * 65535.0).astype(">u2")


def write_pgm(path, pixels: np.ndarray) -> Path:
    """Binary 16-bit PGM (P5, maxval 65535, big-endian)."""
    path = Path(path)
    data = to_u16(pixels)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    """Read a file produced by :func:`write_pgm` as values in ``[0, 1]``."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    if int(parts[2]) != 65535:
        raise ValueError("expected a 16-bit PGM")
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w).astype(np.float64) / 65535.0


def export_integral(image: IntegralImage, path) -> tuple[Path, Path]:
    """Write ``<path>.pgm`` and a ``<path>.txt`` sidecar; returns both paths."""
    base = Path(path)
    pgm = write_pgm(base.with_suffix(".pgm"), image.pixels)
    vp = image.virtual_pose
    c = image.counts
    lines = [
        f"virtual_pose = {vp.x!r} {vp.y!r} {vp.z!r} {vp.yaw!r} {vp.pitch!r} {vp.roll!r}",
        f"frames = {image.n_frames}",
        f"resolution = {image.intrinsics.resolution_px}",
        f"fov_deg = {image.intrinsics.fov_deg!r}",
        f"counts_min = {int(c.min())}",
        f"counts_max = {int(c.max())}",
        f"counts_mean = {float(c.mean())!r}",
        f"valid_pixels = {int((c > 0).sum())}",
    ]
    for name, (x, y) in zip(("top_left", "top_right", "bottom_right", "bottom_left"),
                            image.footprint):
        lines.append(f"corner_{name} = {float(x)!r} {float(y)!r}")
    side = base.with_suffix(".txt")
    side.write_text("\n".join(lines) + "\n")
    return pgm, side
