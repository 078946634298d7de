"""Scenario configuration files.

A scenario is an INI file (``configparser`` dialect) with these sections;
every key is optional and defaults to the module-level defaults:

``[scenario]``
    ``seed`` (global seed), ``mission`` (``predefined`` | ``adaptive``),
    ``mission_id``, ``out`` (output directory), ``verbose``, ``frames``
    (number of raw frames ``simulate`` writes).
``[dem]``
    ``path`` (ESRI ASCII grid, relative to the config file) or
    ``flat_height`` and ``cell_size`` for a generated flat DEM that covers
    the region plus ``margin`` meters.
``[region]``
    ``x_min``, ``y_min``, ``x_max``, ``y_max``.
``[forest]``
    ``density``, ``r_min``, ``r_max``, ``canopy_height``, ``t_ground``,
    ``t_canopy``, ``t_person``, ``t_clutter``.
``[persons]``
    ``positions`` (``x y; x y; ...``) or ``count``; ``radius``.
``[clutter]``
    ``count``.
``[noise]``
    ``sigma_xy``, ``sigma_z``, ``sigma_yaw_deg``, ``yaw_bias_deg``,
    ``correlation_time_s``.
``[camera]``
    ``fov_deg``, ``resolution_px``, ``altitude_agl``.
``[detector]``
    ``name`` plus keyword parameters of that detector.
``[planner]``
    fields of :class:`aosearch.plan.PlannerConfig`.
``[predefined]``
    ``waypoints`` (``x y; x y; ...``).
``[adaptive]``
    ``probability_map`` (CSV path), ``cell_size``, ``start`` (``x y``).
``[geo]``
    ``lat``, ``lon`` of the local-plane origin (optional).

All module seeds derive from the global seed with
:func:`aosearch.rng.derive_seed` and a role tag.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import rng
from .detect import DetectorConfig
from .plan import PlannerConfig

SEED_ROLES = ("scene", "persons", "clutter", "pose-noise")


class ConfigError(ValueError):
    """Invalid scenario; the message names the offending field."""


def _pairs(text: str) -> list[tuple[float, float]]:
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        vals = chunk.replace(",", " ").split()
        if len(vals) != 2:
            raise ValueError(f"expected 'x y', got {chunk!r}")
        out.append((float(vals[0]), float(vals[1])))
    return out


def _fmt_pairs(pairs) -> str:
    return "; ".join(f"{x!r} {y!r}" for x, y in pairs)


@dataclass
class ScenarioConfig:
    seed: int = 0
    mission: str = "predefined"
    mission_id: str = "mission"
    out: str = "out"
    verbose: bool = False
    frames: int = 0
    dem_path: str | None = None
    flat_height: float = 0.0
    dem_cell_size: float = 1.0
    dem_margin: float = 25.0
    region: tuple[float, float, float, float] = (0.0, 0.0, 60.0, 60.0)
    density: float = 0.5
    r_min: float = 1.0
    r_max: float = 3.0
    canopy_height: float = 20.0
    t_ground: float = 0.30
    t_canopy: float = 0.25
    t_person: float = 0.90
    t_clutter: float = 0.75
    person_positions: list[tuple[float, float]] = field(default_factory=list)
    person_count: int = 0
    person_radius: float = 0.4
    clutter_count: int = 0
    sigma_xy: float = 2.0
    sigma_z: float = 1.0
    sigma_yaw_deg: float = 2.0
    yaw_bias_deg: float = 0.0
    correlation_time_s: float = 600.0
    fov_deg: float = 50.82
    resolution_px: int = 512
    altitude_agl: float = 35.0
    detector: str = "reference"
    detector_params: dict = field(default_factory=dict)
    planner: dict = field(default_factory=dict)
    waypoints: list[tuple[float, float]] = field(default_factory=list)
    probability_map: str | None = None
    grid_cell_size: float = 30.0
    start: tuple[float, float] | None = None
    geo: tuple[float, float] | None = None
    base_dir: str = field(default=".", compare=False)

    def seeds(self) -> dict[str, int]:
        """Module seeds derived from the global seed."""
        return {role: rng.derive_seed(self.seed, role) for role in SEED_ROLES}

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def planner_config(self) -> PlannerConfig:
        kw = dict(self.planner)
        kw.setdefault("altitude_agl", self.altitude_agl)
        return PlannerConfig(**kw)

    def validate(self, check_files: bool = True) -> None:
        def need(cond, name, why):
            if not cond:
                raise ConfigError(f"{name}: {why}")

        need(self.mission in ("predefined", "adaptive"), "scenario.mission",
             "must be 'predefined' or 'adaptive'")
        x0, y0, x1, y1 = self.region
        need(x1 > x0 and y1 > y0, "region", "x_max/y_max must exceed x_min/y_min")
        need(0 <= self.density < 1, "forest.density", "must be in [0, 1)")
        need(0 < self.r_min <= self.r_max, "forest.r_min/r_max", "need 0 < r_min <= r_max")
        need(self.canopy_height >= 0, "forest.canopy_height", "must be >= 0")
        need(self.altitude_agl > self.canopy_height, "camera.altitude_agl",
             "camera must fly above the canopy")
        need(self.dem_cell_size > 0, "dem.cell_size", "must be positive")
        need(self.person_count >= 0 and self.clutter_count >= 0, "persons.count",
             "must be >= 0")
        if check_files and self.dem_path is not None:
            need(self.resolve(self.dem_path).is_file(), "dem.path",
                 f"file not found: {self.dem_path}")
        if self.mission == "predefined":
            need(len(self.waypoints) >= 2, "predefined.waypoints", "need at least two points")
        else:
            need(self.probability_map is not None, "adaptive.probability_map", "missing")
            if check_files:
                need(self.resolve(self.probability_map).is_file(), "adaptive.probability_map",
                     f"file not found: {self.probability_map}")
        try:
            self.planner_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"planner: {exc}") from None
        try:
            DetectorConfig(**self.detector_params) if self.detector == "reference" else None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"detector: {exc}") from None


_SIMPLE = {  # (section, key) -> attribute
    ("scenario", "seed"): "seed", ("scenario", "mission"): "mission",
    ("scenario", "mission_id"): "mission_id", ("scenario", "out"): "out",
    ("scenario", "verbose"): "verbose", ("scenario", "frames"): "frames",
    ("dem", "path"): "dem_path", ("dem", "flat_height"): "flat_height",
    ("dem", "cell_size"): "dem_cell_size", ("dem", "margin"): "dem_margin",
    ("forest", "density"): "density", ("forest", "r_min"): "r_min",
    ("forest", "r_max"): "r_max", ("forest", "canopy_height"): "canopy_height",
    ("forest", "t_ground"): "t_ground", ("forest", "t_canopy"): "t_canopy",
    ("forest", "t_person"): "t_person", ("forest", "t_clutter"): "t_clutter",
    ("persons", "count"): "person_count", ("persons", "radius"): "person_radius",
    ("clutter", "count"): "clutter_count",
    ("noise", "sigma_xy"): "sigma_xy", ("noise", "sigma_z"): "sigma_z",
    ("noise", "sigma_yaw_deg"): "sigma_yaw_deg", ("noise", "yaw_bias_deg"): "yaw_bias_deg",
    ("noise", "correlation_time_s"): "correlation_time_s",
    ("camera", "fov_deg"): "fov_deg", ("camera", "resolution_px"): "resolution_px",
    ("camera", "altitude_agl"): "altitude_agl",
    ("adaptive", "probability_map"): "probability_map",
    ("adaptive", "cell_size"): "grid_cell_size",
}
_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}
_PLANNER_FIELDS = {f.name for f in fields(PlannerConfig)}


def _convert(attr: str, raw: str):
    t = str(_TYPES[attr])
    if t == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw


def _number(raw: str):
    try:
        return int(raw)
    except ValueError:
        return float(raw)


def parse_config(text: str, base_dir: str = ".") -> ScenarioConfig:
    """Parse scenario INI text; raises :class:`ConfigError` naming the field."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    cfg = ScenarioConfig(base_dir=str(base_dir))
    known = {"scenario", "dem", "region", "forest", "persons", "clutter", "noise", "camera",
             "detector", "planner", "predefined", "adaptive", "geo"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"[{sec}]: unknown section")
        for key, raw in cp.items(sec):
            name = f"{sec}.{key}"
            try:
                if (sec, key) in _SIMPLE:
                    setattr(cfg, _SIMPLE[(sec, key)], _convert(_SIMPLE[(sec, key)], raw))
                elif sec == "region" and key in ("x_min", "y_min", "x_max", "y_max"):
                    r = list(cfg.region)
                    r[("x_min", "y_min", "x_max", "y_max").index(key)] = float(raw)
                    cfg.region = tuple(r)
                elif (sec, key) == ("persons", "positions"):
                    cfg.person_positions = _pairs(raw)
                elif (sec, key) == ("predefined", "waypoints"):
                    cfg.waypoints = _pairs(raw)
                elif (sec, key) == ("adaptive", "start"):
                    cfg.start = _pairs(raw)[0]
                elif sec == "geo" and key in ("lat", "lon"):
                    g = list(cfg.geo or (0.0, 0.0))
                    g[0 if key == "lat" else 1] = float(raw)
                    cfg.geo = tuple(g)
                elif sec == "detector":
                    if key == "name":
                        cfg.detector = raw
                    else:
                        cfg.detector_params[key] = _number(raw)
                elif sec == "planner" and key in _PLANNER_FIELDS:
                    cfg.planner[key] = math.inf if raw == "inf" else _number(raw)
                else:
                    raise ConfigError(f"{name}: unknown key")
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path.parent))


def dump_config(cfg: ScenarioConfig) -> str:
    """Serialize to INI text; ``parse_config(dump_config(c)) == c``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    sections: dict[str, dict[str, str]] = {}
    for (sec, key), attr in _SIMPLE.items():
        v = getattr(cfg, attr)
        if v is None:
            continue
        sections.setdefault(sec, {})[key] = repr(v) if isinstance(v, float) else str(v)
    sections["region"] = {k: repr(float(v)) for k, v in
                          zip(("x_min", "y_min", "x_max", "y_max"), cfg.region)}
    if cfg.person_positions:
        sections.setdefault("persons", {})["positions"] = _fmt_pairs(cfg.person_positions)
    if cfg.waypoints:
        sections.setdefault("predefined", {})["waypoints"] = _fmt_pairs(cfg.waypoints)
    if cfg.start is not None:
        sections.setdefault("adaptive", {})["start"] = _fmt_pairs([cfg.start])
    if cfg.geo is not None:
        sections["geo"] = {"lat": repr(cfg.geo[0]), "lon": repr(cfg.geo[1])}
    det = {"name": cfg.detector}
    det.update({k: repr(v) for k, v in cfg.detector_params.items()})
    sections["detector"] = det
    if cfg.planner:
        sections["planner"] = {k: ("inf" if v == math.inf else repr(v))
                               for k, v in cfg.planner.items()}
    for sec, kv in sections.items():
        cp[sec] = kv
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d.pop("base_dir")
    return d
