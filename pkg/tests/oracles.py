"""Independent brute-force references used by several test modules."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import map_coordinates

from aosearch.terrain import project_points


def cell_center(r, c, rows, cell_size, origin):
    return (origin[0] + (c + 0.5) * cell_size, origin[1] + (rows - r - 0.5) * cell_size)


def brute_next_cell(probs, visited, cell_size, origin, pos, scale=None, eps=1e-9):
    """Exhaustive potential argmax with ring-wise potential-density tie breaking.

    ``probs`` and ``visited`` are nested lists indexed ``[row][col]``.
    """
    rows, cols = len(probs), len(probs[0])
    lam = cell_size if scale is None else scale
    f = {}
    for r in range(rows):
        for c in range(cols):
            if visited[r][c] or probs[r][c] <= 0:
                continue
            cx, cy = cell_center(r, c, rows, cell_size, origin)
            d = math.sqrt((cx - pos[0]) ** 2 + (cy - pos[1]) ** 2)
            f[(r, c)] = probs[r][c] * math.exp(-d / lam)
    if not f:
        return None
    best = max(f.values())
    tied = sorted(k for k, v in f.items() if v >= best * (1 - eps))
    for ring in range(1, max(rows, cols)):
        if len(tied) == 1:
            return tied[0]
        dens = {}
        for (r, c) in tied:
            ci = cell_center(r, c, rows, cell_size, origin)
            s = 0.0
            for rr in range(max(0, r - ring), min(rows, r + ring + 1)):
                for cc in range(max(0, c - ring), min(cols, c + ring + 1)):
                    if (rr, cc) == (r, c):
                        continue
                    cj = cell_center(rr, cc, rows, cell_size, origin)
                    s += (0.0 if visited[rr][cc] else probs[rr][cc]) / math.dist(ci, cj)
            dens[(r, c)] = s
        top = max(dens.values())
        tied = sorted(k for k, v in dens.items() if v >= top * (1 - eps))
    return tied[0]


def random_planner_case(seed):
    """A 10x10 grid and drone position; half the cases sit on lattice points to force ties."""
    gen = np.random.default_rng(seed)
    if seed % 2:
        probs = gen.choice([0.0, 0.1, 0.25, 0.5, 1.0], size=(10, 10))
        pos = tuple(float(v) for v in 15.0 * gen.integers(0, 21, 2))
    else:
        probs = gen.random((10, 10)) * (gen.random((10, 10)) < 0.7)
        pos = tuple(float(v) for v in gen.uniform(-20, 320, 2))
    visited = gen.random((10, 10)) < 0.2
    return probs, visited, pos


def reprojection_oracle(frame, ground):
    """Project ground points into one frame and sample it bilinearly (edge clamped)."""
    n = frame.pixels.shape[0]
    uv, ok = project_points(frame.measured_pose, frame.intrinsics, ground.reshape(-1, 3))
    coords = np.clip(np.stack([uv[:, 1] - 0.5, uv[:, 0] - 0.5]), 0, n - 1)
    coords = np.nan_to_num(coords)
    vals = map_coordinates(frame.pixels.astype(np.float64), coords, order=1, mode="nearest")
    return np.where(ok, vals, np.nan).reshape(ground.shape[:2])
