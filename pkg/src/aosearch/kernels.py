"""Backend selection for the hot loops.

The compiled Cython module is used when it was built; otherwise the numpy
fallback in :mod:`aosearch._pykernels` is used. Set ``AOSEARCH_PURE_PYTHON=1``
to force the fallback, or call :func:`set_backend` at runtime.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_impl = _pykernels
BACKEND = "python"
if _ckernels is not None and not os.environ.get("AOSEARCH_PURE_PYTHON"):
    _impl = _ckernels
    BACKEND = "cython"


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def set_backend(name: str) -> None:
    global _impl, BACKEND
    if name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        _impl = _ckernels
    elif name == "python":
        _impl = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


@contextmanager
def backend(name: str):
    previous = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def march_surface(origin, dirs, heights, x0, y0, cell_size, offset, step, tol=0.01):
    """March rays from ``origin`` along ``dirs`` until they cross ``heights + offset``.

    Returns ``(points, status)`` where status is 0 for a miss, 1 for a hit
    and 2 when the ray ran into a nodata cell.
    """
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    heights = np.ascontiguousarray(heights, dtype=np.float64)
    finite = heights[np.isfinite(heights)]
    zmax = float(finite.max()) + offset if finite.size else 0.0
    zmin = float(finite.min()) + offset if finite.size else 0.0
    ox, oy, oz = (float(v) for v in origin)
    return _impl.march_surface(ox, oy, oz, dirs, heights, float(x0), float(y0),
                               float(cell_size), float(offset), zmax, zmin,
                               float(step), float(tol))


def disks_contain(points, centers, radii, index, active=None):
    """Lowest index of a disk containing each point (``-1`` if none).

    ``index`` is a :class:`DiskIndex` built for ``centers``/``radii``.
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    if active is None:
        active = np.ones(len(points), dtype=np.uint8)
    else:
        active = np.ascontiguousarray(active, dtype=np.uint8)
    if len(radii) == 0:
        return np.full(len(points), -1, dtype=np.int64)
    return _impl.disks_contain(points, active,
                               np.ascontiguousarray(centers, dtype=np.float64),
                               np.ascontiguousarray(radii, dtype=np.float64),
                               index.x0, index.y0, index.cell, index.nx, index.ny,
                               index.offsets, index.members)


def integrate_frames(ground, valid, frames, cams, focal, center):
    return _impl.integrate_frames(
        np.ascontiguousarray(ground, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(valid, dtype=np.uint8).ravel(),
        np.ascontiguousarray(frames, dtype=np.float32),
        np.ascontiguousarray(cams, dtype=np.float64),
        float(focal), float(center))


class DiskIndex:
    """Uniform bucket grid over a set of disks (CSR layout).

    Every disk is registered in each bucket its bounding box touches, so a
    point only needs to check its own bucket.
    """

    def __init__(self, centers, radii, cell: float | None = None):
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
        radii = np.asarray(radii, dtype=np.float64).ravel()
        if radii.size == 0:
            self.x0 = self.y0 = 0.0
            self.cell = 1.0
            self.nx = self.ny = 1
            self.offsets = np.zeros(2, dtype=np.int64)
            self.members = np.zeros(0, dtype=np.int64)
            return
        rmax = float(radii.max())
        self.cell = float(cell) if cell else max(2.0 * rmax, 1e-6)
        lo = (centers - radii[:, None]).min(axis=0)
        hi = (centers + radii[:, None]).max(axis=0)
        self.x0, self.y0 = float(lo[0]), float(lo[1])
        self.nx = int(np.floor((hi[0] - lo[0]) / self.cell)) + 1
        self.ny = int(np.floor((hi[1] - lo[1]) / self.cell)) + 1
        bx0 = np.floor((centers[:, 0] - radii - self.x0) / self.cell).astype(np.int64)
        bx1 = np.floor((centers[:, 0] + radii - self.x0) / self.cell).astype(np.int64)
        by0 = np.floor((centers[:, 1] - radii - self.y0) / self.cell).astype(np.int64)
        by1 = np.floor((centers[:, 1] + radii - self.y0) / self.cell).astype(np.int64)
        bucket_ids = []
        disk_ids = []
        for d in range(radii.size):
            xs = np.arange(bx0[d], bx1[d] + 1)
            ys = np.arange(by0[d], by1[d] + 1)
            b = (ys[:, None] * self.nx + xs[None, :]).ravel()
            bucket_ids.append(b)
            disk_ids.append(np.full(b.size, d, dtype=np.int64))
        bucket_ids = np.concatenate(bucket_ids)
        disk_ids = np.concatenate(disk_ids)
        order = np.lexsort((disk_ids, bucket_ids))
        bucket_ids = bucket_ids[order]
        self.members = np.ascontiguousarray(disk_ids[order])
        counts = np.bincount(bucket_ids, minlength=self.nx * self.ny)
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
