"""Procedural occluded-forest scenes, thermal rendering and pose noise.

A scene is a Boolean model of disk occluders on a single canopy layer at a
fixed height above the terrain, warm person disks on the ground, and
optional warm clutter: thin elevated bars (sun-warmed deadwood, branches)
that sit between ground and canopy and therefore lie off the focal surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels, rng
from .terrain import (CameraIntrinsics, ElevationModel, Pose, cast_rays, ground_height,
                      pixel_centers, pixel_rays)

DEFAULT_TEMPERATURES = {"t_ground": 0.30, "t_canopy": 0.25, "t_person": 0.90, "t_clutter": 0.75}
PERSON_RADIUS_M = 0.4
SENSOR_NOISE_STD = 0.01

# named parameter bundles, not measured values
FOREST_PRESETS = {
    "conifer": {"target_density": 0.6, "radius_range": (0.8, 2.0), "canopy_height": 20.0},
    "broadleaf": {"target_density": 0.5, "radius_range": (1.5, 3.5), "canopy_height": 20.0},
    "mixed": {"target_density": 0.55, "radius_range": (1.0, 3.0), "canopy_height": 20.0},
}


@dataclass(frozen=True)
class WarmClutter:
    """Elevated warm bar: centre, height above ground, length, width, heading (deg)."""

    x: float
    y: float
    height: float
    length: float = 3.0
    width: float = 0.3
    heading_deg: float = 0.0


@dataclass(eq=False)
class ForestScene:
    region: tuple[float, float, float, float]
    occluder_centers: np.ndarray
    occluder_radii: np.ndarray
    canopy_height: float
    person_centers: np.ndarray
    person_radii: np.ndarray
    t_ground: float = DEFAULT_TEMPERATURES["t_ground"]
    t_canopy: float = DEFAULT_TEMPERATURES["t_canopy"]
    t_person: float = DEFAULT_TEMPERATURES["t_person"]
    t_clutter: float = DEFAULT_TEMPERATURES["t_clutter"]
    seed: int = 0
    clutter: tuple[WarmClutter, ...] = ()
    target_density: float = 0.0
    radius_range: tuple[float, float] = (1.0, 3.0)

    def __post_init__(self):
        self.occluder_centers = np.asarray(self.occluder_centers, dtype=np.float64).reshape(-1, 2)
        self.occluder_radii = np.asarray(self.occluder_radii, dtype=np.float64).ravel()
        self.person_centers = np.asarray(self.person_centers, dtype=np.float64).reshape(-1, 2)
        self.person_radii = np.asarray(self.person_radii, dtype=np.float64).ravel()
        self.clutter = tuple(self.clutter)
        temps = (self.t_ground, self.t_canopy, self.t_person, self.t_clutter)
        if not all(0.0 <= t <= 1.0 for t in temps):
            raise ValueError("temperatures must lie in [0, 1]")
        if not self.t_person > self.t_ground:
            raise ValueError("persons must be warmer than the ground")
        x0, y0, x1, y1 = self.region
        for name, c in (("occluder", self.occluder_centers), ("person", self.person_centers)):
            if len(c) and not ((c[:, 0] >= x0) & (c[:, 0] <= x1)
                               & (c[:, 1] >= y0) & (c[:, 1] <= y1)).all():
                raise ValueError(f"{name} centre outside region")

    def __eq__(self, other):
        if not isinstance(other, ForestScene):
            return NotImplemented
        return dump_scene(self) == dump_scene(other)

    @cached_property
    def occluder_index(self) -> kernels.DiskIndex:
        return kernels.DiskIndex(self.occluder_centers, self.occluder_radii)

    @cached_property
    def person_index(self) -> kernels.DiskIndex:
        return kernels.DiskIndex(self.person_centers, self.person_radii)

    def with_changes(self, **kw) -> "ForestScene":
        vals = {f: getattr(self, f) for f in self.__dataclass_fields__}
        vals.update(kw)
        return ForestScene(**vals)

    def without_occluders(self) -> "ForestScene":
        return self.with_changes(occluder_centers=np.zeros((0, 2)), occluder_radii=np.zeros(0))


def boolean_intensity(target_density: float, r_min: float, r_max: float) -> float:
    """Disk centres per square meter that give the requested covered fraction."""
    if r_max > r_min:
        mean_r2 = (r_max ** 3 - r_min ** 3) / (3.0 * (r_max - r_min))
    else:
        mean_r2 = r_min ** 2
    return -math.log1p(-target_density) / (math.pi * mean_r2)


def generate_forest(region, target_density: float, radius_range=(1.0, 3.0),
                    canopy_height: float = 20.0, seed: int = 0, persons=(),
                    person_radius: float = PERSON_RADIUS_M, clutter=(),
                    **temperatures) -> ForestScene:
    """Occluders from a Boolean model with uniform radii.

    ``persons`` is a sequence of ``(x, y)`` or ``(x, y, radius)``.
    """
    if not 0.0 <= target_density < 1.0:
        raise ValueError("target_density must be in [0, 1)")
    r_min, r_max = (float(v) for v in radius_range)
    if not 0.0 < r_min <= r_max:
        raise ValueError("need 0 < r_min <= r_max")
    x0, y0, x1, y1 = (float(v) for v in region)
    gen = rng.generator(seed, "forest")
    if target_density == 0.0:
        n = 0
    else:
        lam = boolean_intensity(target_density, r_min, r_max)
        n = int(gen.poisson(lam * (x1 - x0) * (y1 - y0)))
    centers = np.column_stack([gen.uniform(x0, x1, n), gen.uniform(y0, y1, n)])
    radii = gen.uniform(r_min, r_max, n)
    pc, pr = [], []
    for p in persons:
        pc.append((float(p[0]), float(p[1])))
        pr.append(float(p[2]) if len(p) > 2 else person_radius)
    temps = dict(DEFAULT_TEMPERATURES)
    temps.update(temperatures)
    return ForestScene((x0, y0, x1, y1), centers, radii, float(canopy_height),
                       np.array(pc).reshape(-1, 2), np.array(pr), seed=int(seed),
                       clutter=tuple(clutter), target_density=float(target_density),
                       radius_range=(r_min, r_max), **temps)


def random_persons(region, count: int, seed: int, margin: float = 0.0):
    gen = rng.generator(seed, "persons")
    x0, y0, x1, y1 = region
    return [(float(gen.uniform(x0 + margin, x1 - margin)),
             float(gen.uniform(y0 + margin, y1 - margin))) for _ in range(count)]


def random_clutter(region, count: int, seed: int, height_range=(4.0, 8.0),
                   length_range=(2.5, 4.0), width: float = 0.3, margin: float = 0.0):
    gen = rng.generator(seed, "clutter")
    x0, y0, x1, y1 = region
    out = []
    for _ in range(count):
        out.append(WarmClutter(float(gen.uniform(x0 + margin, x1 - margin)),
                               float(gen.uniform(y0 + margin, y1 - margin)),
                               float(gen.uniform(*height_range)),
                               float(gen.uniform(*length_range)), width,
                               float(gen.uniform(0.0, 180.0))))
    return out


@dataclass(frozen=True)
class PoseNoiseModel:
    """Gaussian GNSS/compass error model.

    Each channel is a first-order Gauss-Markov process with stationary
    standard deviation ``sigma_*`` and correlation time
    ``correlation_time_s`` (samples are ``sample_interval_s`` apart). With a
    correlation time of 0 the offsets are independent per sample.
    """

    sigma_xy: float = 2.0
    sigma_z: float = 1.0
    sigma_yaw_deg: float = 2.0
    yaw_bias_deg: float = 0.0
    seed: int = 0
    correlation_time_s: float = 600.0
    sample_interval_s: float = 1.0

    def __post_init__(self):
        if min(self.sigma_xy, self.sigma_z, self.sigma_yaw_deg) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.correlation_time_s < 0 or self.sample_interval_s <= 0:
            raise ValueError("bad correlation settings")

    @property
    def is_zero(self) -> bool:
        return self.sigma_xy == self.sigma_z == self.sigma_yaw_deg == self.yaw_bias_deg == 0

    def unit_offsets(self, index: int) -> np.ndarray:
        """Unit-variance ``(x, y, z, yaw)`` process values at ``index``."""
        return _unit_process(self.seed, self.correlation_time_s, self.sample_interval_s, index)


_BLOCK = 1024
_process_cache: dict[tuple, list[np.ndarray]] = {}


def _unit_process(seed: int, tau: float, dt: float, index: int) -> np.ndarray:
    if index < 0:
        raise ValueError("sample_index must be >= 0")
    block, offset = divmod(index, _BLOCK)
    if tau == 0:
        w = rng.generator(seed, "pose-noise", block).standard_normal((_BLOCK, 4))
        return w[offset]
    key = (seed, tau, dt)
    blocks = _process_cache.setdefault(key, [])
    phi = math.exp(-dt / tau)
    gain = math.sqrt(1.0 - phi * phi)
    while len(blocks) <= block:
        b = len(blocks)
        w = rng.generator(seed, "pose-noise", b).standard_normal((_BLOCK, 4))
        out = np.empty_like(w)
        prev = blocks[-1][-1] if blocks else None
        for i in range(_BLOCK):
            if prev is None:
                prev = w[i]
            else:
                prev = phi * prev + gain * w[i]
            out[i] = prev
        blocks.append(out)
    if len(_process_cache) > 64:
        _process_cache.pop(next(iter(_process_cache)))
    return blocks[block][offset]


def perturb_pose(true_pose: Pose, model: PoseNoiseModel, sample_index: int) -> Pose:
    """Measured pose for the ``sample_index``-th image of a mission."""
    if model.is_zero:
        return true_pose
    e = model.unit_offsets(sample_index)
    return true_pose.replace(x=true_pose.x + model.sigma_xy * e[0],
                             y=true_pose.y + model.sigma_xy * e[1],
                             z=true_pose.z + model.sigma_z * e[2],
                             yaw=true_pose.yaw + model.sigma_yaw_deg * e[3] + model.yaw_bias_deg)


@dataclass
class ThermalFrame:
    pixels: np.ndarray
    measured_pose: Pose
    true_pose: Pose
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)

    def with_pose(self, measured_pose: Pose) -> "ThermalFrame":
        return ThermalFrame(self.pixels, measured_pose, self.true_pose, self.intrinsics)


def _clutter_hits(scene: ForestScene, origin, dirs, dem: ElevationModel, active):
    """Index of the highest clutter bar hit by each active ray, else -1."""
    hit = np.full(len(dirs), -1, dtype=np.int64)
    best_z = np.full(len(dirs), -np.inf)
    ids = np.flatnonzero(active & (dirs[:, 2] < 0))
    for k, c in enumerate(scene.clutter):
        zc = ground_height(dem, c.x, c.y) + c.height
        if origin[2] <= zc:
            continue
        d = dirs[ids]
        t = (zc - origin[2]) / d[:, 2]
        px = origin[0] + t * d[:, 0] - c.x
        py = origin[1] + t * d[:, 1] - c.y
        h = math.radians(c.heading_deg)
        along = px * math.sin(h) + py * math.cos(h)
        across = px * math.cos(h) - py * math.sin(h)
        inside = (np.abs(along) <= 0.5 * c.length) & (np.abs(across) <= 0.5 * c.width)
        take = inside & (zc > best_z[ids])
        hit[ids[take]] = k
        best_z[ids[take]] = zc
    return hit


def _canopy_blocked(scene: ForestScene, origin, dirs, dem: ElevationModel, active=None):
    if len(scene.occluder_radii) == 0:
        return np.zeros(len(dirs), dtype=bool)
    pose = Pose(*origin)
    pts, hit = cast_rays(pose, dirs, dem, offset=scene.canopy_height)
    act = hit if active is None else (hit & active)
    idx = kernels.disks_contain(pts[:, :2], scene.occluder_centers, scene.occluder_radii,
                                scene.occluder_index, act)
    return idx >= 0


def render_thermal(scene: ForestScene, true_pose: Pose, intr: CameraIntrinsics,
                   dem: ElevationModel, measured_pose: Pose | None = None,
                   noise_std: float = SENSOR_NOISE_STD) -> ThermalFrame:
    """Ray-cast one thermal frame from the true pose.

    Per-pixel sensor noise comes from a stream keyed by the scene seed and
    the exact true pose, so identical inputs give identical frames.
    """
    if true_pose.z <= ground_height(dem, true_pose.x, true_pose.y) + scene.canopy_height:
        raise ValueError("camera must fly above the canopy")
    n = intr.resolution_px
    origin = true_pose.position
    dirs = pixel_rays(true_pose, intr, pixel_centers(intr))
    img = np.full(n * n, scene.t_ground, dtype=np.float64)

    occluded = _canopy_blocked(scene, origin, dirs, dem)
    img[occluded] = scene.t_canopy
    open_sky = ~occluded
    if scene.clutter:
        ch = _clutter_hits(scene, origin, dirs, dem, open_sky)
        warm = ch >= 0
        img[warm] = scene.t_clutter
        open_sky &= ~warm
    if len(scene.person_radii):
        gpts, ghit = cast_rays(true_pose, dirs, dem)
        on = open_sky & ghit
        pidx = kernels.disks_contain(gpts[:, :2], scene.person_centers, scene.person_radii,
                                     scene.person_index, on)
        img[pidx >= 0] = scene.t_person
    if noise_std > 0:
        gen = rng.generator(scene.seed, "sensor", *true_pose.as_tuple())
        img += gen.normal(0.0, noise_std, n * n)
        np.clip(img, 0.0, 1.0, out=img)
    return ThermalFrame(img.reshape(n, n).astype(np.float32),
                        measured_pose if measured_pose is not None else true_pose,
                        true_pose, intr)


def line_of_sight(scene: ForestScene, camera_xyz, targets, dem: ElevationModel) -> np.ndarray:
    """True where the straight line from the camera to a ground target is clear."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    origin = np.asarray(camera_xyz, dtype=np.float64)
    d = targets - origin
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    blocked = _canopy_blocked(scene, origin, d, dem)
    if scene.clutter:
        blocked |= _clutter_hits(scene, origin, d, dem, ~blocked) >= 0
    return ~blocked


# --------------------------------------------------------------------------
# scene dump / restore
# --------------------------------------------------------------------------

_SCALARS = ("seed", "canopy_height", "t_ground", "t_canopy", "t_person", "t_clutter",
            "target_density")


def dump_scene(scene: ForestScene) -> str:
    lines = ["[scene]"]
    for key in _SCALARS:
        lines.append(f"{key} = {getattr(scene, key)!r}")
    lines.append(f"radius_range = {scene.radius_range[0]!r} {scene.radius_range[1]!r}")
    lines.append("[region]")
    for key, v in zip(("x_min", "y_min", "x_max", "y_max"), scene.region):
        lines.append(f"{key} = {float(v)!r}")
    lines.append(f"[occluders] count = {len(scene.occluder_radii)}")
    for (x, y), r in zip(scene.occluder_centers, scene.occluder_radii):
        lines.append(f"{float(x)!r} {float(y)!r} {float(r)!r}")
    lines.append(f"[persons] count = {len(scene.person_radii)}")
    for (x, y), r in zip(scene.person_centers, scene.person_radii):
        lines.append(f"{float(x)!r} {float(y)!r} {float(r)!r}")
    lines.append(f"[clutter] count = {len(scene.clutter)}")
    for c in scene.clutter:
        lines.append(" ".join(repr(float(v)) for v in
                              (c.x, c.y, c.height, c.length, c.width, c.heading_deg)))
    return "\n".join(lines) + "\n"


def load_scene(text: str) -> ForestScene:
    section = None
    scalars: dict[str, str] = {}
    region: dict[str, float] = {}
    rows: dict[str, list[list[float]]] = {"occluders": [], "persons": [], "clutter": []}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            section = line[1:line.index("]")]
            continue
        try:
            if section == "scene":
                k, v = (s.strip() for s in line.split("=", 1))
                scalars[k] = v
            elif section == "region":
                k, v = (s.strip() for s in line.split("=", 1))
                region[k] = float(v)
            elif section in rows:
                rows[section].append([float(v) for v in line.split()])
            else:
                raise ValueError(f"unexpected content in section {section!r}")
        except ValueError as exc:
            raise ValueError(f"scene line {lineno}: {exc}") from None
    occ = np.array(rows["occluders"]).reshape(-1, 3)
    per = np.array(rows["persons"]).reshape(-1, 3)
    rr = [float(v) for v in scalars.pop("radius_range", "1.0 3.0").split()]
    kw = {k: (int(v) if k == "seed" else float(v)) for k, v in scalars.items()}
    return ForestScene((region["x_min"], region["y_min"], region["x_max"], region["y_max"]),
                       occ[:, :2], occ[:, 2], person_centers=per[:, :2], person_radii=per[:, 2],
                       clutter=tuple(WarmClutter(*r) for r in rows["clutter"]),
                       radius_range=(rr[0], rr[1]), **kw)


def capture(scene: ForestScene, poses, intr: CameraIntrinsics, dem: ElevationModel,
            noise: PoseNoiseModel | None = None, first_index: int = 0,
            noise_std: float = SENSOR_NOISE_STD) -> list[ThermalFrame]:
    """Render one frame per true pose and attach its measured pose.

    ``first_index`` is the mission-wide index of the first sample, so that
    pose noise stays continuous across consecutive apertures.
    """
    frames = []
    for k, pose in enumerate(poses):
        measured = pose if noise is None else perturb_pose(pose, noise, first_index + k)
        frames.append(render_thermal(scene, pose, intr, dem, measured, noise_std))
    return frames
