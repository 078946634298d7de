"""Time the compiled kernels against the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py [--repeat 5]``. Each kernel is
called with identical inputs under both backends; the script checks that
the outputs agree before reporting timings.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from aosearch import kernels
from aosearch.aoscore import integrate, plan_line_sa
from aosearch.scenesim import capture, generate_forest
from aosearch.terrain import (CameraIntrinsics, ElevationModel, Pose, pixel_centers,
                              pixel_rays)


def _best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases():
    intr = CameraIntrinsics()
    hilly = ElevationModel.from_function(lambda x, y: 3.0 * np.sin(x / 15.0) * np.cos(y / 11.0),
                                         -60, -60, 60, 60)
    pose = Pose(0.0, 0.0, 35.0, 0.0)
    dirs = pixel_rays(pose, intr, pixel_centers(intr))
    scene = generate_forest((-50, -50, 50, 50), 0.5, seed=1)
    pts = np.random.default_rng(0).uniform(-50, 50, (intr.resolution_px ** 2, 2))
    plan = plan_line_sa((0.0, 0.0), 0.0)
    flat = ElevationModel.flat(-60, -60, 60, 60)
    frames = capture(scene, plan.poses, intr, flat)

    def march():
        return kernels.march_surface(pose.position, dirs, hilly.heights, hilly.node_x0,
                                     hilly.node_y0, hilly.cell_size, 0.0,
                                     hilly.cell_size / 4.0)

    def disks():
        return kernels.disks_contain(pts, scene.occluder_centers, scene.occluder_radii,
                                     scene.occluder_index)

    def integ():
        return integrate(frames, flat, plan.virtual_pose, intr).pixels

    return {"march_surface (512^2 rays, hilly DEM)": march,
            "disks_contain (512^2 points)": disks,
            "integrate (30 frames, 512^2)": integ}


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True) or np.allclose(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), equal_nan=True, atol=1e-9)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels are not built; only the numpy fallback is timed")
    print(f"{'kernel':40s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup")
    for name, fn in _cases().items():
        times, outs = {}, {}
        for b in backends:
            with kernels.backend(b):
                outs[b] = fn()
                times[b] = _best_of(fn, args.repeat)
        agree = len(backends) < 2 or _same(outs["python"], outs["cython"])
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        cols = " ".join(f"{times[b] * 1e3:8.1f}ms" for b in backends)
        print(f"{name:40s} {cols}   {speed:6.1f}x{'' if agree else '  OUTPUT MISMATCH'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
