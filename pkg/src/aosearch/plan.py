"""Potential-field cell selection and aperture placement for adaptive search.

Grid rows follow the probability CSV: row 0 is the northernmost row and
column 0 the westernmost column. A cell id is a ``(row, col)`` tuple.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .aoscore import SamplingPlan, plan_line_sa
from .detect import Detection
from .terrain import ElevationModel

Cell = tuple[int, int]


@dataclass
class ProbabilityGrid:
    """Per-cell find probabilities over a rectangular search region.

    Args:
        probabilities: ``(rows, cols)`` array, row 0 = north.
        cell_size: Cell pitch in meters.
        origin: World ``(x, y)`` of the region's south-west corner.
    """

    probabilities: np.ndarray
    cell_size: float = 30.0
    origin: tuple[float, float] = (0.0, 0.0)
    visited: np.ndarray = None

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise ValueError("probabilities must be a non-empty 2D array")
        if not np.isfinite(p).all() or (p < 0).any():
            raise ValueError("probabilities must be finite and >= 0")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        self.probabilities = p
        if self.visited is None:
            self.visited = np.zeros(p.shape, dtype=bool)
        else:
            self.visited = np.array(self.visited, dtype=bool)
            self.probabilities[self.visited] = 0.0
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        self.initial = self.probabilities.copy()
        rows, cols = p.shape
        r, c = np.mgrid[0:rows, 0:cols]
        cx = self.origin[0] + (c + 0.5) * self.cell_size
        cy = self.origin[1] + (rows - r - 0.5) * self.cell_size
        self._centers = np.stack([cx, cy], axis=-1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probabilities.shape

    @property
    def centers(self) -> np.ndarray:
        """``(rows, cols, 2)`` world cell centres."""
        return self._centers

    @property
    def region(self) -> tuple[float, float, float, float]:
        rows, cols = self.shape
        x0, y0 = self.origin
        return (x0, y0, x0 + cols * self.cell_size, y0 + rows * self.cell_size)

    def center(self, cell: Cell) -> tuple[float, float]:
        c = self._centers[cell]
        return float(c[0]), float(c[1])

    def cell_at(self, x: float, y: float) -> Cell | None:
        rows, cols = self.shape
        col = math.floor((x - self.origin[0]) / self.cell_size)
        row = rows - 1 - math.floor((y - self.origin[1]) / self.cell_size)
        if 0 <= row < rows and 0 <= col < cols:
            return int(row), int(col)
        return None

    def mark_visited(self, cell: Cell) -> None:
        self.visited[cell] = True
        self.probabilities[cell] = 0.0

    def pending(self) -> list[Cell]:
        """Unvisited cells that started with a positive probability."""
        rows, cols = np.nonzero((self.initial > 0) & ~self.visited)
        return list(zip(rows.tolist(), cols.tolist()))

    def copy(self) -> "ProbabilityGrid":
        g = ProbabilityGrid(self.probabilities.copy(), self.cell_size, self.origin,
                            self.visited.copy())
        g.initial = self.initial.copy()
        return g


def load_probability_csv(text: str, cell_size: float = 30.0, origin=(0.0, 0.0),
                         region=None) -> ProbabilityGrid:
    """Parse a probability map (north row first, values in [0, 1]).

    When ``region = (x_min, y_min, x_max, y_max)`` is given the map must have
    exactly ``height / cell_size`` rows and ``width / cell_size`` columns.
    """
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or all(not v.strip() for v in row):
            continue
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise ValueError(f"probability map line {lineno}: non-numeric value") from None
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ValueError(f"probability map line {lineno}: values must lie in [0, 1]")
        if rows and len(vals) != len(rows[0]):
            raise ValueError(f"probability map line {lineno}: ragged row")
        rows.append(vals)
    if not rows:
        raise ValueError("probability map is empty")
    p = np.array(rows)
    if region is not None:
        x0, y0, x1, y1 = region
        want = (round((y1 - y0) / cell_size), round((x1 - x0) / cell_size))
        if p.shape != want:
            raise ValueError(f"probability map is {p.shape[0]}x{p.shape[1]}, "
                             f"region needs {want[0]}x{want[1]}")
        origin = (x0, y0)
    return ProbabilityGrid(p, cell_size, origin)


@dataclass(frozen=True)
class PlannerConfig:
    """Planner parameters.

    Attributes:
        distance_scale: Length scale of the distance decay; ``None`` uses
            the grid's cell size.
        tie_epsilon: Relative tolerance under which potentials tie.
        weak_threshold: Detections at or above it are re-sampled.
        accept_threshold: Re-sampled confidence that confirms a find.
        max_path_length: Flight budget in meters.
        match_radius: Distance (m) within which a re-sampled detection
            matches the initial one.
        sa_length: Aperture length (m); equals the cell size by default.
        sa_spacing: Distance between samples (m).
        altitude_agl: Flight height above ground (m).
    """

    distance_scale: float | None = None
    tie_epsilon: float = 1e-9
    weak_threshold: float = 0.05
    accept_threshold: float = 0.10
    max_path_length: float = math.inf
    match_radius: float = 5.0
    sa_length: float = 30.0
    sa_spacing: float = 1.0
    altitude_agl: float = 35.0

    def __post_init__(self):
        if self.distance_scale is not None and not self.distance_scale > 0:
            raise ValueError("distance_scale must be positive")
        if not 0.0 <= self.weak_threshold <= self.accept_threshold <= 1.0:
            raise ValueError("need 0 <= weak_threshold <= accept_threshold <= 1")
        if self.tie_epsilon < 0 or self.match_radius < 0:
            raise ValueError("tie_epsilon and match_radius must be >= 0")
        if not self.max_path_length >= 0:
            raise ValueError("max_path_length must be >= 0")
        if not (self.sa_length > 0 and self.sa_spacing > 0 and self.altitude_agl > 0):
            raise ValueError("sa_length, sa_spacing and altitude_agl must be positive")

    def scale(self, grid: ProbabilityGrid) -> float:
        return self.distance_scale if self.distance_scale is not None else grid.cell_size


def log_potential(grid: ProbabilityGrid, drone_pos, cfg: PlannerConfig | None = None):
    """``log f(i)``; ``-inf`` for zero-probability and visited cells."""
    cfg = cfg or PlannerConfig()
    d = np.hypot(grid.centers[..., 0] - drone_pos[0], grid.centers[..., 1] - drone_pos[1])
    p = grid.probabilities
    with np.errstate(divide="ignore"):
        lf = np.log(p) - d / cfg.scale(grid)
    lf[(p <= 0) | grid.visited] = -np.inf
    return lf


def potential(grid: ProbabilityGrid, drone_pos, cfg: PlannerConfig | None = None) -> np.ndarray:
    """``f(i) = P(i) exp(-|x - c_i| / scale)`` for every cell."""
    return np.exp(log_potential(grid, drone_pos, cfg))


def potential_density(grid: ProbabilityGrid, cell: Cell, radius: int | None = None) -> float:
    """Sum of ``P(j) / |c_i - c_j|`` over cells ``j != i``.

    ``radius`` limits ``j`` to the Chebyshev ring neighbourhood of that many
    cells around ``i``; ``None`` uses the whole grid.
    """
    rows, cols = grid.shape
    if rows * cols < 2:
        raise ValueError("potential density needs at least two cells")
    r0, c0 = cell
    if radius is None:
        radius = max(rows, cols)
    ra, rb = max(0, r0 - radius), min(rows, r0 + radius + 1)
    ca, cb = max(0, c0 - radius), min(cols, c0 + radius + 1)
    p = grid.probabilities[ra:rb, ca:cb]
    c = grid.centers[ra:rb, ca:cb]
    ci = grid.centers[cell]
    d = np.hypot(c[..., 0] - ci[0], c[..., 1] - ci[1])
    d[r0 - ra, c0 - ca] = np.inf
    return float(np.sum(p / d))


def _near_max(values: np.ndarray, eps: float) -> np.ndarray:
    m = values.max()
    if m <= 0:
        return np.ones(values.shape, dtype=bool)
    return values >= m * (1.0 - eps)


def next_cell(grid: ProbabilityGrid, drone_pos, cfg: PlannerConfig | None = None) -> Cell | None:
    """Unvisited cell with the highest potential, or ``None`` when nothing is left.

    Ties (within ``tie_epsilon`` relative) are broken by the potential
    density over growing ring neighbourhoods, then by the lowest
    ``(row, col)``.
    """
    cfg = cfg or PlannerConfig()
    lf = log_potential(grid, drone_pos, cfg)
    m = lf.max()
    if m == -np.inf:
        return None
    tied = np.argwhere(lf >= m + math.log1p(-cfg.tie_epsilon))
    if len(tied) == 1:
        return int(tied[0, 0]), int(tied[0, 1])
    cand = [(int(r), int(c)) for r, c in tied]
    rows, cols = grid.shape
    for radius in range(1, max(rows, cols)):
        pd = np.array([potential_density(grid, c, radius) for c in cand])
        keep = _near_max(pd, cfg.tie_epsilon)
        cand = [c for c, k in zip(cand, keep) if k]
        if len(cand) == 1:
            return cand[0]
    return min(cand)


def scan_plan_for_cell(grid: ProbabilityGrid, cell: Cell, drone_pos,
                       cfg: PlannerConfig | None = None,
                       dem: ElevationModel | None = None) -> SamplingPlan:
    """Edge-to-edge line aperture through the cell centre.

    Of the four choices (east- or westbound horizontal, north- or southbound
    vertical) the one whose entry point is nearest to ``drone_pos`` wins.
    Ties prefer horizontal, then the west or south entry.
    """
    cfg = cfg or PlannerConfig()
    cx, cy = grid.center(cell)
    half = 0.5 * (max(1, round(cfg.sa_length / cfg.sa_spacing)) - 1) * cfg.sa_spacing
    options = [  # (rank, heading, entry point)
        (0, 90.0, (cx - half, cy)),
        (1, 270.0, (cx + half, cy)),
        (2, 0.0, (cx, cy - half)),
        (3, 180.0, (cx, cy + half)),
    ]
    dist = [math.hypot(e[0] - drone_pos[0], e[1] - drone_pos[1]) for _, _, e in options]
    best = min(range(4), key=lambda k: (dist[k], options[k][0]))
    return plan_line_sa((cx, cy), options[best][1], cfg.sa_length, cfg.sa_spacing,
                        cfg.altitude_agl, dem)


def resample_plan(detection_world_center, previous_heading_deg: float,
                  cfg: PlannerConfig | None = None,
                  dem: ElevationModel | None = None) -> SamplingPlan:
    """Line aperture centred on a detection, orthogonal to the previous one."""
    cfg = cfg or PlannerConfig()
    heading = (previous_heading_deg + 90.0) % 360.0
    return plan_line_sa((detection_world_center[0], detection_world_center[1]), heading,
                        cfg.sa_length, cfg.sa_spacing, cfg.altitude_agl, dem)


@dataclass(frozen=True)
class ConfirmationRecord:
    initial_confidence: float
    resampled_confidence: float
    verdict: str
    matched: Detection | None = field(default=None, compare=False)

    @property
    def delta(self) -> float:
        return self.resampled_confidence - self.initial_confidence

    @property
    def confirmed(self) -> bool:
        return self.verdict == "confirmed-true"


def confirm(initial: Detection, resample_detections, cfg: PlannerConfig | None = None
            ) -> ConfirmationRecord:
    """Compare a detection with the detections of its re-sampling pass.

    Raises:
        ValueError: If ``initial`` is below the re-sampling trigger.
    """
    cfg = cfg or PlannerConfig()
    if initial.confidence < cfg.weak_threshold:
        raise ValueError("initial detection is below the re-sampling threshold")
    x0, y0 = initial.world_center[0], initial.world_center[1]
    best = None
    for d in resample_detections:
        if math.hypot(d.world_center[0] - x0, d.world_center[1] - y0) <= cfg.match_radius:
            if best is None or d.confidence > best.confidence:
                best = d
    c1 = best.confidence if best is not None else 0.0
    verdict = "confirmed-true" if c1 >= cfg.accept_threshold else "confirmed-false"
    return ConfirmationRecord(initial.confidence, c1, verdict, best)
