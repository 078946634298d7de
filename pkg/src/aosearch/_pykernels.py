"""Vectorised numpy versions of the compiled kernels in ``_ckernels.pyx``.

Each function mirrors its compiled twin operation for operation so both
backends agree to floating-point precision.
"""

from __future__ import annotations

import numpy as np

MISS, HIT, NODATA = 0, 1, 2
MAX_BISECT = 64


def _lerp(a, b, t):
    return np.where(a == b, a, (1.0 - t) * a + t * b)


def _height(h, x0, y0, cs, x, y):
    """Bilinear heights plus a code array (0 ok, 1 outside, 2 nodata)."""
    nr, nc = h.shape
    fx = (x - x0) / cs
    fy = (y - y0) / cs
    code = np.zeros(x.shape, dtype=np.uint8)
    outside = (fx < 0.0) | (fy < 0.0) | (fx > nc - 1) | (fy > nr - 1)
    code[outside] = 1
    c = np.clip(np.floor(np.where(outside, 0.0, fx)), 0, nc - 2).astype(np.intp)
    r = np.clip(np.floor(np.where(outside, 0.0, fy)), 0, nr - 2).astype(np.intp)
    tx = fx - c
    ty = fy - r
    h00 = h[r, c]
    h01 = h[r, c + 1]
    h10 = h[r + 1, c]
    h11 = h[r + 1, c + 1]
    nod = ~outside & (np.isnan(h00) | np.isnan(h01) | np.isnan(h10) | np.isnan(h11))
    code[nod] = 2
    with np.errstate(invalid="ignore"):
        s = _lerp(_lerp(h00, h01, tx), _lerp(h10, h11, tx), ty)
    return s, code


def march_surface(ox, oy, oz, dirs, heights, x0, y0, cs, offset, zmax, zmin, step, tol):
    n = dirs.shape[0]
    out = np.full((n, 3), np.nan)
    status = np.zeros(n, dtype=np.uint8)
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    alive = dz < 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.maximum((oz - zmax) / (-dz), 0.0)
    inside = np.zeros(n, dtype=bool)
    tp = np.full(n, -1.0)
    fp = np.zeros(n)
    ta = np.zeros(n)
    tb = np.zeros(n)
    fa = np.zeros(n)
    bracket = np.zeros(n, dtype=bool)

    def record(ids, t):
        out[ids, 0] = ox + t * dx[ids]
        out[ids, 1] = oy + t * dy[ids]
        out[ids, 2] = oz + t * dz[ids]
        status[ids] = HIT

    k = 0
    while True:
        ids = np.flatnonzero(alive)
        if ids.size == 0:
            break
        t = t0[ids] + k * step
        k += 1
        z = oz + t * dz[ids]
        low = z < zmin - step
        alive[ids[low]] = False
        ids, t, z = ids[~low], t[~low], z[~low]
        s, code = _height(heights, x0, y0, cs, ox + t * dx[ids], oy + t * dy[ids])
        nod = code == 2
        status[ids[nod]] = NODATA
        alive[ids[nod]] = False
        out_fp = code == 1
        exited = out_fp & inside[ids]
        alive[ids[exited]] = False
        tp[ids[out_fp & ~exited]] = -1.0
        ok = code == 0
        ids, t, z, s = ids[ok], t[ok], z[ok], s[ok]
        inside[ids] = True
        f = z - (s + offset)
        crossed = f <= 0.0
        direct = crossed & ((f == 0.0) | (tp[ids] < 0.0))
        record(ids[direct], t[direct])
        alive[ids[crossed]] = False
        br = crossed & ~direct
        bids = ids[br]
        bracket[bids] = True
        ta[bids] = tp[bids]
        tb[bids] = t[br]
        fa[bids] = fp[bids]
        keep = ~crossed
        tp[ids[keep]] = t[keep]
        fp[ids[keep]] = f[keep]

    ids = np.flatnonzero(bracket)
    tm = np.zeros(n)
    for _ in range(MAX_BISECT):
        if ids.size == 0:
            break
        tm[ids] = 0.5 * (ta[ids] + tb[ids])
        s, code = _height(heights, x0, y0, cs, ox + tm[ids] * dx[ids], oy + tm[ids] * dy[ids])
        nod = code == 2
        status[ids[nod]] = NODATA
        stop_out = code == 1
        record(ids[stop_out], tm[ids[stop_out]])
        ok = code == 0
        ids, s = ids[ok], s[ok]
        fm = oz + tm[ids] * dz[ids] - (s + offset)
        done = np.abs(fm) < tol
        record(ids[done], tm[ids[done]])
        ids, fm = ids[~done], fm[~done]
        same = (fm > 0.0) == (fa[ids] > 0.0)
        ta[ids[same]] = tm[ids[same]]
        fa[ids[same]] = fm[same]
        tb[ids[~same]] = tm[ids[~same]]
    record(ids, tm[ids])
    return out, status


def disks_contain(pts, active, centers, radii, gx0, gy0, gcs, gnx, gny, offsets, members):
    n = pts.shape[0]
    idx = np.full(n, -1, dtype=np.int64)
    if n == 0 or members.size == 0:
        return idx
    counts = np.diff(offsets)
    width = int(counts.max())
    padded = np.full((gnx * gny, width), -1, dtype=np.int64)
    slot = np.arange(members.size) - np.repeat(offsets[:-1], counts)
    padded[np.repeat(np.arange(gnx * gny), counts), slot] = members

    px, py = pts[:, 0], pts[:, 1]
    bx = np.floor((px - gx0) / gcs)
    by = np.floor((py - gy0) / gcs)
    ok = active.astype(bool) & (bx >= 0) & (by >= 0) & (bx < gnx) & (by < gny)
    ids = np.flatnonzero(ok)
    b = (by[ids] * gnx + bx[ids]).astype(np.intp)
    best = np.full(ids.size, -1, dtype=np.int64)
    for j in range(width):
        d = padded[b, j]
        has = d >= 0
        dd = np.where(has, d, 0)
        ddx = px[ids] - centers[dd, 0]
        ddy = py[ids] - centers[dd, 1]
        inside = has & (ddx * ddx + ddy * ddy <= radii[dd] * radii[dd])
        take = inside & ((best < 0) | (d < best))
        best[take] = d[take]
    idx[ids] = best
    return idx


def integrate_frames(ground, valid, frames, cams, focal, center):
    m = ground.shape[0]
    nf, rows, cols = frames.shape
    sums = np.zeros(m, dtype=np.float64)
    counts = np.zeros(m, dtype=np.int32)
    vid = np.flatnonzero(valid)
    g = ground[vid]
    for k in range(nf):
        rt = cams[k, :9].reshape(3, 3)
        p = g - cams[k, 9:12]
        qz = rt[2, 0] * p[:, 0] + rt[2, 1] * p[:, 1] + rt[2, 2] * p[:, 2]
        front = qz > 1e-9
        ids = vid[front]
        p = p[front]
        qz = qz[front]
        qx = rt[0, 0] * p[:, 0] + rt[0, 1] * p[:, 1] + rt[0, 2] * p[:, 2]
        qy = rt[1, 0] * p[:, 0] + rt[1, 1] * p[:, 1] + rt[1, 2] * p[:, 2]
        w = 1.0 / qz
        u = focal * qx * w + center
        v = focal * qy * w + center
        inb = (u >= 0.0) & (v >= 0.0) & (u < cols) & (v < rows)
        ids, u, v = ids[inb], u[inb], v[inb]
        su = np.clip(u - 0.5, 0.0, cols - 1)
        sv = np.clip(v - 0.5, 0.0, rows - 1)
        c0 = np.floor(su).astype(np.intp)
        r0 = np.floor(sv).astype(np.intp)
        c1 = np.minimum(c0 + 1, cols - 1)
        r1 = np.minimum(r0 + 1, rows - 1)
        tx = su - c0
        ty = sv - r0
        fr = frames[k]
        f00 = fr[r0, c0].astype(np.float64)
        f01 = fr[r0, c1].astype(np.float64)
        f10 = fr[r1, c0].astype(np.float64)
        f11 = fr[r1, c1].astype(np.float64)
        sums[ids] += _lerp(_lerp(f00, f01, tx), _lerp(f10, f11, tx), ty)
        counts[ids] += 1
    return sums, counts
