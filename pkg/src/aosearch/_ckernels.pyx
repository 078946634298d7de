# cython: language_level=3
"""Compiled inner loops. Semantics must match ``_pykernels`` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, fabs, isnan

cnp.import_array()

cdef enum:
    MISS = 0
    HIT = 1
    NODATA = 2
    MAX_BISECT = 64
    BLOCK = 512


cdef inline double _lerp(double a, double b, double t) nogil:
    if a == b:
        return a
    return (1.0 - t) * a + t * b


cdef inline int _height(const double[:, ::1] h, double x0, double y0, double cs,
                        double x, double y, double* out) nogil:
    """0 = ok, 1 = outside footprint, 2 = nodata neighbour."""
    cdef Py_ssize_t nr = h.shape[0]
    cdef Py_ssize_t nc = h.shape[1]
    cdef double fx = (x - x0) / cs
    cdef double fy = (y - y0) / cs
    cdef Py_ssize_t c, r
    cdef double tx, ty, h00, h01, h10, h11
    if fx < 0.0 or fy < 0.0 or fx > nc - 1 or fy > nr - 1:
        return 1
    c = <Py_ssize_t>floor(fx)
    r = <Py_ssize_t>floor(fy)
    if c > nc - 2:
        c = nc - 2
    if r > nr - 2:
        r = nr - 2
    tx = fx - c
    ty = fy - r
    h00 = h[r, c]
    h01 = h[r, c + 1]
    h10 = h[r + 1, c]
    h11 = h[r + 1, c + 1]
    if isnan(h00) or isnan(h01) or isnan(h10) or isnan(h11):
        return 2
    out[0] = _lerp(_lerp(h00, h01, tx), _lerp(h10, h11, tx), ty)
    return 0


def march_surface(double ox, double oy, double oz,
                  const double[:, ::1] dirs,
                  const double[:, ::1] heights,
                  double x0, double y0, double cs, double offset,
                  double zmax, double zmin, double step, double tol):
    cdef Py_ssize_t n = dirs.shape[0]
    out_np = np.full((n, 3), np.nan)
    status_np = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] out = out_np
    cdef unsigned char[::1] status = status_np
    cdef Py_ssize_t i
    cdef long k
    cdef double dx, dy, dz, t0, t, tp, fp, f, s, ta, tb, fa, fm, tm
    cdef int code, inside, it
    with nogil:
        for i in range(n):
            dx = dirs[i, 0]
            dy = dirs[i, 1]
            dz = dirs[i, 2]
            if dz >= 0.0:
                continue
            t0 = (oz - zmax) / (-dz)
            if t0 < 0.0:
                t0 = 0.0
            inside = 0
            tp = -1.0
            fp = 0.0
            k = 0
            while True:
                t = t0 + k * step
                k += 1
                if oz + t * dz < zmin - step:
                    break
                code = _height(heights, x0, y0, cs, ox + t * dx, oy + t * dy, &s)
                if code == 2:
                    status[i] = NODATA
                    break
                if code == 1:
                    if inside:
                        break
                    tp = -1.0
                    continue
                inside = 1
                f = oz + t * dz - (s + offset)
                if f <= 0.0:
                    if f == 0.0 or tp < 0.0:
                        out[i, 0] = ox + t * dx
                        out[i, 1] = oy + t * dy
                        out[i, 2] = oz + t * dz
                        status[i] = HIT
                        break
                    ta = tp
                    tb = t
                    fa = fp
                    tm = 0.5 * (ta + tb)
                    for it in range(MAX_BISECT):
                        tm = 0.5 * (ta + tb)
                        code = _height(heights, x0, y0, cs, ox + tm * dx, oy + tm * dy, &s)
                        if code != 0:
                            break
                        fm = oz + tm * dz - (s + offset)
                        if fabs(fm) < tol:
                            break
                        if (fm > 0.0) == (fa > 0.0):
                            ta = tm
                            fa = fm
                        else:
                            tb = tm
                    if code == 2:
                        status[i] = NODATA
                        break
                    out[i, 0] = ox + tm * dx
                    out[i, 1] = oy + tm * dy
                    out[i, 2] = oz + tm * dz
                    status[i] = HIT
                    break
                tp = t
                fp = f
    return out_np, status_np


def disks_contain(const double[:, ::1] pts,
                  const unsigned char[::1] active,
                  const double[:, ::1] centers,
                  const double[::1] radii,
                  double gx0, double gy0, double gcs, Py_ssize_t gnx, Py_ssize_t gny,
                  const cnp.int64_t[::1] offsets,
                  const cnp.int64_t[::1] members):
    """Index of the lowest-numbered disk containing each point, or -1."""
    cdef Py_ssize_t n = pts.shape[0]
    idx_np = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = idx_np
    cdef Py_ssize_t i, bx, by, b
    cdef cnp.int64_t m, d, best
    cdef double px, py, ddx, ddy
    with nogil:
        for i in range(n):
            if not active[i]:
                continue
            px = pts[i, 0]
            py = pts[i, 1]
            bx = <Py_ssize_t>floor((px - gx0) / gcs)
            by = <Py_ssize_t>floor((py - gy0) / gcs)
            if bx < 0 or by < 0 or bx >= gnx or by >= gny:
                continue
            b = by * gnx + bx
            best = -1
            for m in range(offsets[b], offsets[b + 1]):
                d = members[m]
                ddx = px - centers[d, 0]
                ddy = py - centers[d, 1]
                if ddx * ddx + ddy * ddy <= radii[d] * radii[d]:
                    if best < 0 or d < best:
                        best = d
            idx[i] = best
    return idx_np


def integrate_frames(const double[:, ::1] ground,
                     const unsigned char[::1] valid,
                     const float[:, :, ::1] frames,
                     const double[:, ::1] cams,
                     double focal, double center):
    """Accumulate bilinear frame samples at each ground point.

    ``cams[k]`` holds the world-to-camera rotation (row-major, 9 values)
    followed by the camera centre.
    """
    cdef Py_ssize_t m = ground.shape[0]
    cdef Py_ssize_t nf = frames.shape[0]
    cdef Py_ssize_t rows = frames.shape[1]
    cdef Py_ssize_t cols = frames.shape[2]
    sums_np = np.zeros(m, dtype=np.float64)
    counts_np = np.zeros(m, dtype=np.int32)
    cdef double[::1] sums = sums_np
    cdef int[::1] counts = counts_np
    cdef Py_ssize_t k, i, c0, r0, c1, r1, b0, b1
    cdef double px, py, pz, qx, qy, qz, cx, cy, cz, u, v, su, sv, tx, ty, w
    cdef double r00, r01, r02, r10, r11, r12, r20, r21, r22
    cdef double ucols = cols, vrows = rows
    with nogil:
        # blocks of pixels x all frames; per-pixel accumulation order stays frame order
        b0 = 0
        while b0 < m:
            b1 = b0 + BLOCK if b0 + BLOCK < m else m
            for k in range(nf):
                r00 = cams[k, 0]; r01 = cams[k, 1]; r02 = cams[k, 2]
                r10 = cams[k, 3]; r11 = cams[k, 4]; r12 = cams[k, 5]
                r20 = cams[k, 6]; r21 = cams[k, 7]; r22 = cams[k, 8]
                cx = cams[k, 9]; cy = cams[k, 10]; cz = cams[k, 11]
                for i in range(b0, b1):
                    if not valid[i]:
                        continue
                    px = ground[i, 0] - cx
                    py = ground[i, 1] - cy
                    pz = ground[i, 2] - cz
                    qz = r20 * px + r21 * py + r22 * pz
                    if qz <= 1e-9:
                        continue
                    qx = r00 * px + r01 * py + r02 * pz
                    qy = r10 * px + r11 * py + r12 * pz
                    w = 1.0 / qz
                    u = focal * qx * w + center
                    v = focal * qy * w + center
                    if u < 0.0 or v < 0.0 or u >= ucols or v >= vrows:
                        continue
                    su = u - 0.5
                    sv = v - 0.5
                    if su < 0.0:
                        su = 0.0
                    if sv < 0.0:
                        sv = 0.0
                    if su > ucols - 1:
                        su = ucols - 1
                    if sv > vrows - 1:
                        sv = vrows - 1
                    c0 = <Py_ssize_t>su
                    r0 = <Py_ssize_t>sv
                    c1 = c0 + 1 if c0 + 1 < cols else c0
                    r1 = r0 + 1 if r0 + 1 < rows else r0
                    tx = su - c0
                    ty = sv - r0
                    sums[i] += _lerp(_lerp(frames[k, r0, c0], frames[k, r0, c1], tx),
                                     _lerp(frames[k, r1, c0], frames[k, r1, c1], tx), ty)
                    counts[i] += 1
            b0 = b1
    return sums_np, counts_np
