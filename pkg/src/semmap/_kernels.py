"""Compiled inner loops.

Everything here operates on plain arrays; the public modules own the data
structures and call into these functions. All loops are single-threaded.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from numpy.polynomial import chebyshev

_INF = np.inf


def _kernel_shape(x):
    tp = 2.0 * np.pi * x
    return (2.0 + np.cos(tp)) / 3.0 * (1.0 - x) + np.sin(tp) / (2.0 * np.pi)


#: Monomial coefficients (in t = 2x - 1) of a degree-20 Chebyshev interpolant
#: of the unit kernel on x in [0, 1]; matches the closed form to ~3e-15 and
#: lets the scatter loop run without trig calls.
KERNEL_POLY = chebyshev.cheb2poly(chebyshev.chebinterpolate(lambda t: _kernel_shape((t + 1.0) / 2.0), 20))


@njit(cache=True)
def _init_axis(o, d, cur, c):
    # returns step, t_max, t_delta along one axis (segment parameter units)
    if d > 0.0:
        return 1, ((cur + 1) * c - o) / d, c / d
    if d < 0.0:
        return -1, (cur * c - o) / d, -c / d
    return 0, _INF, _INF


@njit(cache=True)
def traverse_fill(origins, ends, cell_size, offsets, out):
    """Write the traversed cell keys of every segment into ``out``.

    ``offsets[r]:offsets[r+1]`` is the slice reserved for segment ``r``; its
    length must be ``1 + |di| + |dj| + |dk|`` between the end cells.
    """
    n = origins.shape[0]
    cur = np.empty(3, np.int64)
    last = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    tmax = np.empty(3, np.float64)
    tdelta = np.empty(3, np.float64)
    remaining = np.empty(3, np.int64)
    for r in range(n):
        for a in range(3):
            cur[a] = np.int64(math.floor(origins[r, a] / cell_size))
            last[a] = np.int64(math.floor(ends[r, a] / cell_size))
            s, tm, td = _init_axis(origins[r, a], ends[r, a] - origins[r, a], cur[a], cell_size)
            step[a] = s
            tmax[a] = tm
            tdelta[a] = td
            remaining[a] = abs(last[a] - cur[a])
        pos = offsets[r]
        for a in range(3):
            out[pos, a] = cur[a]
        pos += 1
        while pos < offsets[r + 1]:
            best = -1
            for a in range(3):
                if remaining[a] > 0 and (best < 0 or tmax[a] < tmax[best]):
                    best = a
            cur[best] += step[best]
            tmax[best] += tdelta[best]
            remaining[best] -= 1
            for a in range(3):
                out[pos, a] = cur[a]
            pos += 1


@njit(cache=True)
def ndt_insert(rows, local_pts, log_odds, count, mean, m2, l_hit, l_min, l_max):
    """Sequential Welford update of per-cell mean and centered second moments."""
    for p in range(rows.shape[0]):
        r = rows[p]
        n1 = count[r] + 1
        d0 = local_pts[p, 0] - mean[r, 0]
        d1 = local_pts[p, 1] - mean[r, 1]
        d2 = local_pts[p, 2] - mean[r, 2]
        mean[r, 0] += d0 / n1
        mean[r, 1] += d1 / n1
        mean[r, 2] += d2 / n1
        e0 = local_pts[p, 0] - mean[r, 0]
        e1 = local_pts[p, 1] - mean[r, 1]
        e2 = local_pts[p, 2] - mean[r, 2]
        # symmetrized outer(delta, x - mean'); the two factors are collinear
        m2[r, 0, 0] += d0 * e0
        m2[r, 1, 1] += d1 * e1
        m2[r, 2, 2] += d2 * e2
        v = 0.5 * (d0 * e1 + d1 * e0)
        m2[r, 0, 1] += v
        m2[r, 1, 0] += v
        v = 0.5 * (d0 * e2 + d2 * e0)
        m2[r, 0, 2] += v
        m2[r, 2, 0] += v
        v = 0.5 * (d1 * e2 + d2 * e1)
        m2[r, 1, 2] += v
        m2[r, 2, 1] += v
        count[r] = n1
        lo = log_odds[r] + l_hit
        if lo > l_max:
            lo = l_max
        elif lo < l_min:
            lo = l_min
        log_odds[r] = lo


@njit(cache=True)
def sparse_kernel(d, length, sigma0):
    if d >= length:
        return 0.0
    x = d / length
    tp = 2.0 * math.pi * x
    k = sigma0 * ((2.0 + math.cos(tp)) / 3.0 * (1.0 - x) + math.sin(tp) / (2.0 * math.pi))
    # rounding near the support boundary can produce -1e-17
    return k if k > 0.0 else 0.0


# FMA contraction lets the per-column lane loops vectorize; no reassociation,
# so every voxel still sums its contributions in point order.
@njit(cache=True, fastmath={"contract", "nnan", "ninf", "nsz"})
def bki_accumulate(points, col_a, col_b, base, cell_size, length, sigma0, radius, acc, touched, poly):
    """Scatter kernel mass of every point onto voxel centres within ``length``.

    ``acc`` is a dense (nx, ny, nz, C) block whose voxel (0, 0, 0) has key
    ``base``. Each point adds its kernel value to column ``col_a`` and, when
    ``col_b >= 0``, also to ``col_b``.
    """
    nx, ny, nz = acc.shape[0], acc.shape[1], acc.shape[2]
    l2 = length * length
    inv_l = 1.0 / length
    n_coef = poly.shape[0]
    w = np.empty(2 * radius + 3)
    t = np.empty(2 * radius + 3)
    q = np.empty(2 * radius + 3)
    for p in range(points.shape[0]):
        px, py, pz = points[p, 0], points[p, 1], points[p, 2]
        ki = np.int64(math.floor(px / cell_size))
        kj = np.int64(math.floor(py / cell_size))
        kk = np.int64(math.floor(pz / cell_size))
        ca = col_a[p]
        cb = col_b[p]
        for di in range(-radius, radius + 1):
            i = ki + di
            cx = (i + 0.5) * cell_size - px
            li = i - base[0]
            if li < 0 or li >= nx or cx * cx >= l2:
                continue
            for dj in range(-radius, radius + 1):
                j = kj + dj
                cy = (j + 0.5) * cell_size - py
                lj = j - base[1]
                rxy = cx * cx + cy * cy
                if lj < 0 or lj >= ny or rxy >= l2:
                    continue
                # candidate k range from the remaining radius with one cell of
                # slack per side; the exact q < l2 test below decides
                h = math.sqrt(l2 - rxy)
                k_lo = max(np.int64(math.floor((pz - h) / cell_size)) - 1, kk - radius, base[2])
                k_hi = min(np.int64(math.floor((pz + h) / cell_size)) + 1, kk + radius, base[2] + nz - 1)
                n = k_hi - k_lo + 1
                if n <= 0:
                    continue
                for m in range(n):
                    cz = (k_lo + m + 0.5) * cell_size - pz
                    q[m] = rxy + cz * cz
                    t[m] = 2.0 * math.sqrt(q[m]) * inv_l - 1.0
                    w[m] = poly[n_coef - 1]
                for c in range(n_coef - 2, -1, -1):
                    cc = poly[c]
                    for m in range(n):
                        w[m] = w[m] * t[m] + cc
                for m in range(n):
                    if q[m] < l2:
                        v = w[m]
                        if v < 0.0:
                            v = 0.0
                        v *= sigma0
                        lk = k_lo + m - base[2]
                        touched[li, lj, lk] = 1
                        acc[li, lj, lk, ca] += v
                        if cb >= 0:
                            acc[li, lj, lk, cb] += v


@njit(cache=True)
def render_first_hit(
    origin, dirs, t_end, vol, vol_base, cell_size, state, label,
    use_gauss, gauss_ok, g_mean, g_inv, maha_thresh,
):
    """March unit-direction rays through a dense row volume; stop at first accepted cell.

    ``state`` per row: 1 occupied, -1 free, 0 unknown. Returns per-ray label
    (-1 when no cell accepted), hit distance, and whether a free cell was crossed.
    """
    n = dirs.shape[0]
    out_label = np.full(n, -1, np.int64)
    out_depth = np.zeros(n, np.float64)
    out_free = np.zeros(n, np.bool_)
    out_hit = np.zeros(n, np.bool_)
    nx, ny, nz = vol.shape[0], vol.shape[1], vol.shape[2]
    lo = np.empty(3, np.float64)
    hi = np.empty(3, np.float64)
    for a in range(3):
        lo[a] = vol_base[a] * cell_size
    hi[0] = (vol_base[0] + nx) * cell_size
    hi[1] = (vol_base[1] + ny) * cell_size
    hi[2] = (vol_base[2] + nz) * cell_size
    cur = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    tmax = np.empty(3, np.float64)
    tdelta = np.empty(3, np.float64)
    for r in range(n):
        # clip the ray to the volume's bounding box
        t0 = 0.0
        t1 = t_end[r]
        for a in range(3):
            d = dirs[r, a]
            if d == 0.0:
                if origin[a] < lo[a] or origin[a] >= hi[a]:
                    t0 = 1.0
                    t1 = 0.0
            else:
                ta = (lo[a] - origin[a]) / d
                tb = (hi[a] - origin[a]) / d
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
        if t0 >= t1:
            continue
        for a in range(3):
            p = origin[a] + t0 * dirs[r, a]
            c = np.int64(math.floor(p / cell_size))
            # entry point may round onto the far side of the box
            if c < vol_base[a]:
                c = vol_base[a]
            top = vol_base[a] + vol.shape[a] - 1
            if c > top:
                c = top
            cur[a] = c
            d = dirs[r, a]
            if d > 0.0:
                step[a] = 1
                tmax[a] = ((c + 1) * cell_size - origin[a]) / d
                tdelta[a] = cell_size / d
            elif d < 0.0:
                step[a] = -1
                tmax[a] = (c * cell_size - origin[a]) / d
                tdelta[a] = -cell_size / d
            else:
                step[a] = 0
                tmax[a] = _INF
                tdelta[a] = _INF
        t_enter = t0
        while True:
            li = cur[0] - vol_base[0]
            lj = cur[1] - vol_base[1]
            lk = cur[2] - vol_base[2]
            if li < 0 or lj < 0 or lk < 0 or li >= nx or lj >= ny or lk >= nz:
                break
            row = vol[li, lj, lk]
            if row >= 0:
                s = state[row]
                if s < 0:
                    out_free[r] = True
                elif s > 0:
                    accept = True
                    depth = t_enter
                    if use_gauss and gauss_ok[row]:
                        # closest approach of the ray to the cell Gaussian
                        m0 = g_mean[row, 0] - origin[0]
                        m1 = g_mean[row, 1] - origin[1]
                        m2 = g_mean[row, 2] - origin[2]
                        d0, d1, d2 = dirs[r, 0], dirs[r, 1], dirs[r, 2]
                        A = g_inv[row]
                        ad0 = A[0, 0] * d0 + A[0, 1] * d1 + A[0, 2] * d2
                        ad1 = A[1, 0] * d0 + A[1, 1] * d1 + A[1, 2] * d2
                        ad2 = A[2, 0] * d0 + A[2, 1] * d1 + A[2, 2] * d2
                        dad = d0 * ad0 + d1 * ad1 + d2 * ad2
                        dam = m0 * ad0 + m1 * ad1 + m2 * ad2
                        t_star = dam / dad
                        if t_star < 0.0:
                            t_star = 0.0
                        q0 = m0 - t_star * d0
                        q1 = m1 - t_star * d1
                        q2 = m2 - t_star * d2
                        maha2 = (
                            q0 * (A[0, 0] * q0 + A[0, 1] * q1 + A[0, 2] * q2)
                            + q1 * (A[1, 0] * q0 + A[1, 1] * q1 + A[1, 2] * q2)
                            + q2 * (A[2, 0] * q0 + A[2, 1] * q1 + A[2, 2] * q2)
                        )
                        accept = maha2 <= maha_thresh * maha_thresh
                        depth = t_star
                    if accept:
                        out_label[r] = label[row]
                        out_depth[r] = depth
                        out_hit[r] = True
                        break
            best = 0
            if tmax[1] < tmax[best]:
                best = 1
            if tmax[2] < tmax[best]:
                best = 2
            if tmax[best] > t1:
                break
            t_enter = tmax[best]
            cur[best] += step[best]
            tmax[best] += tdelta[best]
    return out_label, out_depth, out_free, out_hit
