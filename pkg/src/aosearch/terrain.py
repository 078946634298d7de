"""Elevation model, camera geometry and world/image projection.

World frame is a local East-North-Up plane in meters. A camera with
``yaw = pitch = roll = 0`` looks straight down with image columns increasing
to the east and image rows increasing to the south. Yaw is a compass angle
(clockwise seen from above) of the image's "up" direction.

Pixel coordinates are continuous: pixel ``(col, row)`` covers
``[col, col + 1) x [row, row + 1)`` and the optical axis hits
``(resolution / 2, resolution / 2)``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from . import kernels

EARTH_RADIUS_M = 6_378_137.0


class DEMParseError(ValueError):
    """Malformed ASCII grid; ``line`` is 1-based."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DomainError(ValueError):
    """Query outside the raster footprint."""


class NodataError(DomainError):
    """Interpolation touched a nodata node."""


@dataclass(frozen=True)
class ElevationModel:
    """Regular height raster, ESRI ASCII-grid conventions.

    ``origin_x``/``origin_y`` is the lower-left corner of the lower-left cell;
    heights are stored at cell centres. ``heights[0]`` is the *southernmost*
    row (the file stores the northernmost row first). Nodata nodes are NaN.
    """

    origin_x: float
    origin_y: float
    cell_size: float
    heights: np.ndarray
    nodata_value: float = -9999.0

    def __post_init__(self):
        h = np.array(self.heights, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
            raise ValueError("DEM needs at least 2 x 2 nodes")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        h[h == self.nodata_value] = np.nan
        if np.isinf(h).any():
            raise ValueError("DEM heights must be finite")
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)

    @property
    def n_rows(self) -> int:
        return self.heights.shape[0]

    @property
    def n_cols(self) -> int:
        return self.heights.shape[1]

    @property
    def node_x0(self) -> float:
        return self.origin_x + 0.5 * self.cell_size

    @property
    def node_y0(self) -> float:
        return self.origin_y + 0.5 * self.cell_size

    @property
    def footprint(self) -> tuple[float, float, float, float]:
        """``(x_min, y_min, x_max, y_max)`` of the interpolable area."""
        return (self.node_x0, self.node_y0,
                self.node_x0 + (self.n_cols - 1) * self.cell_size,
                self.node_y0 + (self.n_rows - 1) * self.cell_size)

    def node_xy(self, col: int, row: int) -> tuple[float, float]:
        """World position of node ``(col, row)``; row 0 is the southernmost."""
        return self.node_x0 + col * self.cell_size, self.node_y0 + row * self.cell_size

    def contains(self, x, y) -> np.ndarray | bool:
        x0, y0, x1, y1 = self.footprint
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    @classmethod
    def flat(cls, x_min: float, y_min: float, x_max: float, y_max: float,
             height: float = 0.0, cell_size: float = 1.0) -> "ElevationModel":
        """Constant-height DEM whose footprint covers the given rectangle."""
        nc = int(math.ceil((x_max - x_min) / cell_size)) + 1
        nr = int(math.ceil((y_max - y_min) / cell_size)) + 1
        return cls(x_min - 0.5 * cell_size, y_min - 0.5 * cell_size, cell_size,
                   np.full((max(nr, 2), max(nc, 2)), float(height)))

    @classmethod
    def from_function(cls, fn, x_min, y_min, x_max, y_max, cell_size=1.0):
        """Sample ``fn(x, y)`` on a grid covering the rectangle."""
        dem = cls.flat(x_min, y_min, x_max, y_max, 0.0, cell_size)
        xs = dem.node_x0 + cell_size * np.arange(dem.n_cols)
        ys = dem.node_y0 + cell_size * np.arange(dem.n_rows)
        gx, gy = np.meshgrid(xs, ys)
        return cls(dem.origin_x, dem.origin_y, cell_size, fn(gx, gy))


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")


def load_dem(raster_text: str | TextIO) -> ElevationModel:
    """Parse an ESRI ASCII grid (header keys in the canonical order)."""
    stream = io.StringIO(raster_text) if isinstance(raster_text, str) else raster_text
    lines = stream.read().splitlines()
    header = {}
    for i, key in enumerate(_HEADER_KEYS):
        if i >= len(lines):
            raise DEMParseError(f"missing header key {key!r}", i + 1)
        parts = lines[i].split()
        if len(parts) != 2 or parts[0].lower() != key.lower():
            raise DEMParseError(f"expected {key!r}, got {lines[i]!r}", i + 1)
        try:
            header[key] = int(parts[1]) if key in ("ncols", "nrows") else float(parts[1])
        except ValueError:
            raise DEMParseError(f"bad value for {key!r}: {parts[1]!r}", i + 1) from None
    ncols, nrows = header["ncols"], header["nrows"]
    if ncols < 2 or nrows < 2:
        raise DEMParseError("grid must be at least 2 x 2", 1 if ncols < 2 else 2)
    if not header["cellsize"] > 0:
        raise DEMParseError("cellsize must be positive", 5)
    rows = []
    lineno = len(_HEADER_KEYS)
    for raw in lines[len(_HEADER_KEYS):]:
        lineno += 1
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) != ncols:
            raise DEMParseError(f"expected {ncols} values, got {len(parts)}", lineno)
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise DEMParseError(f"non-numeric cell ({exc})", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise DEMParseError("non-finite cell", lineno)
        rows.append(values)
    if len(rows) != nrows:
        raise DEMParseError(f"expected {nrows} rows, got {len(rows)}", lineno)
    heights = np.array(rows[::-1], dtype=np.float64)
    return ElevationModel(header["xllcorner"], header["yllcorner"], header["cellsize"],
                          heights, header["NODATA_value"])


def dump_dem(dem: ElevationModel) -> str:
    out = [f"ncols {dem.n_cols}", f"nrows {dem.n_rows}",
           f"xllcorner {dem.origin_x!r}", f"yllcorner {dem.origin_y!r}",
           f"cellsize {dem.cell_size!r}", f"NODATA_value {dem.nodata_value!r}"]
    h = np.where(np.isnan(dem.heights), dem.nodata_value, dem.heights)
    for row in h[::-1]:
        out.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


def ground_height(dem: ElevationModel, x, y):
    """Bilinear height at ``(x, y)``; exact at nodes.

    Accepts scalars or arrays. Raises :class:`DomainError` outside the
    footprint and :class:`NodataError` next to a nodata node.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    s, code = kernels._pykernels._height(dem.heights, dem.node_x0, dem.node_y0,
                                         dem.cell_size, np.atleast_1d(xa), np.atleast_1d(ya))
    if (code == 1).any():
        raise DomainError("query outside DEM footprint")
    if (code == 2).any():
        raise NodataError("query touches a nodata node")
    if xa.ndim == 0 and ya.ndim == 0:
        return float(s[0])
    return s.reshape(np.broadcast(xa, ya).shape)


@dataclass(frozen=True)
class CameraIntrinsics:
    fov_deg: float = 50.82
    resolution_px: int = 512

    def __post_init__(self):
        if not 0 < self.fov_deg < 180:
            raise ValueError("fov_deg must be in (0, 180)")
        if self.resolution_px < 1:
            raise ValueError("resolution_px must be >= 1")

    @property
    def focal_px(self) -> float:
        return 0.5 * self.resolution_px / math.tan(math.radians(0.5 * self.fov_deg))

    @property
    def center_px(self) -> float:
        return 0.5 * self.resolution_px

    def ground_sample_distance(self, height_above_ground: float) -> float:
        """Meters per pixel at the image centre for a nadir view."""
        return height_above_ground / self.focal_px


def _wrap_deg(a: float) -> float:
    a = math.fmod(a, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


@dataclass(frozen=True)
class Pose:
    """Camera position (m) and orientation (deg, normalised to (-180, 180])."""

    x: float
    y: float
    z: float
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            object.__setattr__(self, name, _wrap_deg(float(getattr(self, name))))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_tuple(self) -> tuple[float, ...]:
        return (self.x, self.y, self.z, self.yaw, self.pitch, self.roll)

    def replace(self, **kw) -> "Pose":
        vals = dict(zip(("x", "y", "z", "yaw", "pitch", "roll"), self.as_tuple()))
        vals.update(kw)
        return Pose(**vals)


_NADIR = np.array([[1.0, 0.0, 0.0],
                   [0.0, -1.0, 0.0],
                   [0.0, 0.0, -1.0]])


def rotation(pose: Pose) -> np.ndarray:
    """Camera-to-world rotation; columns are the camera x/y/z axes in world.

    ``R = Rz(-yaw) @ NADIR @ Rx(pitch) @ Ry(roll)``: pitch tilts the boresight
    about the image x axis, roll about the image y axis.
    """
    ps = math.radians(pose.yaw)
    th = math.radians(pose.pitch)
    ph = math.radians(pose.roll)
    rz = np.array([[math.cos(ps), math.sin(ps), 0.0],
                   [-math.sin(ps), math.cos(ps), 0.0],
                   [0.0, 0.0, 1.0]])
    rx = np.array([[1.0, 0.0, 0.0],
                   [0.0, math.cos(th), -math.sin(th)],
                   [0.0, math.sin(th), math.cos(th)]])
    ry = np.array([[math.cos(ph), 0.0, math.sin(ph)],
                   [0.0, 1.0, 0.0],
                   [-math.sin(ph), 0.0, math.cos(ph)]])
    return rz @ _NADIR @ rx @ ry


def camera_row(pose: Pose) -> np.ndarray:
    """Packed world-to-camera rotation (9) + centre (3) used by the kernels."""
    return np.concatenate([rotation(pose).T.ravel(), pose.position])


def project_points(pose: Pose, intr: CameraIntrinsics, points) -> tuple[np.ndarray, np.ndarray]:
    """Project world points; returns ``(uv, in_frame)``.

    Points behind (or on) the camera plane get NaN coordinates.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3) - pose.position
    q = p @ rotation(pose)
    uv = np.full((len(p), 2), np.nan)
    front = q[:, 2] > 1e-9
    f, c = intr.focal_px, intr.center_px
    uv[front, 0] = f * q[front, 0] / q[front, 2] + c
    uv[front, 1] = f * q[front, 1] / q[front, 2] + c
    n = intr.resolution_px
    with np.errstate(invalid="ignore"):
        ok = front & (uv[:, 0] >= 0) & (uv[:, 0] < n) & (uv[:, 1] >= 0) & (uv[:, 1] < n)
    return uv, ok


def project_world_to_pixel(pose: Pose, intr: CameraIntrinsics, p) -> tuple[float, float] | None:
    """Continuous pixel coordinates of ``p``, or ``None`` when out of frame."""
    uv, ok = project_points(pose, intr, p)
    if not ok[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def pixel_rays(pose: Pose, intr: CameraIntrinsics, uv) -> np.ndarray:
    """Unit world-frame view directions for continuous pixel coordinates."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    f, c = intr.focal_px, intr.center_px
    d = np.empty((len(uv), 3))
    d[:, 0] = (uv[:, 0] - c) / f
    d[:, 1] = (uv[:, 1] - c) / f
    d[:, 2] = 1.0
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d @ rotation(pose).T


def pixel_centers(intr: CameraIntrinsics) -> np.ndarray:
    """``(res*res, 2)`` pixel-centre coordinates in row-major order."""
    n = intr.resolution_px
    v, u = np.mgrid[0:n, 0:n] + 0.5
    return np.column_stack([u.ravel(), v.ravel()])


def cast_rays(pose: Pose, dirs: np.ndarray, dem: ElevationModel, offset: float = 0.0,
              tol: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Intersect rays from the camera with ``DEM + offset``.

    Fixed-step marching (a quarter cell) then bisection until the height
    residual is below ``tol``. Returns ``(points, hit)``; misses are NaN.
    """
    pts, status = kernels.march_surface(pose.position, dirs, dem.heights, dem.node_x0,
                                        dem.node_y0, dem.cell_size, offset,
                                        0.25 * dem.cell_size, tol)
    return pts, status == 1


def pixel_ray_to_ground(pose: Pose, intr: CameraIntrinsics, pixel, dem: ElevationModel):
    """First DEM intersection of a pixel's view ray, or ``None`` on a miss."""
    pts, hit = cast_rays(pose, pixel_rays(pose, intr, pixel), dem)
    if not hit[0]:
        return None
    return tuple(float(v) for v in pts[0])


def view_ground_points(pose: Pose, intr: CameraIntrinsics, dem: ElevationModel):
    """Ground points of every pixel centre: ``(res, res, 3)`` array and validity mask."""
    n = intr.resolution_px
    pts, hit = cast_rays(pose, pixel_rays(pose, intr, pixel_centers(intr)), dem)
    return pts.reshape(n, n, 3), hit.reshape(n, n)


@dataclass(frozen=True)
class GeoOrigin:
    """Anchor of the local tangent plane (degrees)."""

    lat: float
    lon: float
    _scale: tuple[float, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = math.pi / 180.0 * EARTH_RADIUS_M
        object.__setattr__(self, "_scale", (k * math.cos(math.radians(self.lat)), k))

    def to_local(self, lat, lon):
        return (np.subtract(lon, self.lon) * self._scale[0],
                np.subtract(lat, self.lat) * self._scale[1])

    def to_geo(self, x, y):
        return (self.lat + np.divide(y, self._scale[1]),
                self.lon + np.divide(x, self._scale[0]))
