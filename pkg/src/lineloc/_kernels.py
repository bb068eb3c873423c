"""Compiled inner loops for visibility and matching.

Both run once per map line or per (detection, line) pair and dominate a
tracking step on large maps, so they are written as scalar loops for numba.
"""

import math

import numpy as np
from numba import njit

@njit(cache=True, inline="always")
def _pixel_in_view(x, y, z, fx, fy, cx, cy, width, height):
    if not z > 0.0:
        return False
    u = fx * x / z + cx
    v = fy * y / z + cy
    if not (math.isfinite(u) and math.isfinite(v)):
        return False
    fu = np.floor(u)
    fv = np.floor(v)
    return 0.0 <= fu < width and 0.0 <= fv < height


@njit(cache=True, inline="always", error_model="numpy")
def _project(p, R, t, fx, fy, cx, cy):
    x = R[0, 0] * p[0] + R[0, 1] * p[1] + R[0, 2] * p[2] + t[0]
    y = R[1, 0] * p[0] + R[1, 1] * p[1] + R[1, 2] * p[2] + t[1]
    z = R[2, 0] * p[0] + R[2, 1] * p[1] + R[2, 2] * p[2] + t[2]
    return fx * x / z + cx, fy * y / z + cy


@njit(cache=True)
def visible_segments(starts, ends, R, t, fx, fy, cx, cy, width, height, n_steps):
    """``(ids, starts, ends)`` of the visible (sub)segments, in id order.

    A line seen at one end only is walked from that end in steps of
    ``1 / n_steps`` of its length; the last in-view sample replaces the far end.
    """
    n = starts.shape[0]
    out_ids = np.empty(n, dtype=np.int64)
    out_s = np.empty((n, 3))
    out_e = np.empty((n, 3))
    qa = np.empty(3)
    qb = np.empty(3)
    count = 0
    for i in range(n):
        for r in range(3):
            qa[r] = R[r, 0] * starts[i, 0] + R[r, 1] * starts[i, 1] + R[r, 2] * starts[i, 2] + t[r]
            qb[r] = R[r, 0] * ends[i, 0] + R[r, 1] * ends[i, 1] + R[r, 2] * ends[i, 2] + t[r]
        vs = _pixel_in_view(qa[0], qa[1], qa[2], fx, fy, cx, cy, width, height)
        ve = _pixel_in_view(qb[0], qb[1], qb[2], fx, fy, cx, cy, width, height)
        if not (vs or ve):
            continue
        for r in range(3):
            out_s[count, r] = starts[i, r]
            out_e[count, r] = ends[i, r]
        if not (vs and ve):
            a, b = (qa, qb) if vs else (qb, qa)
            good = 0
            for k in range(1, n_steps):
                f = k / n_steps
                if not _pixel_in_view(a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]),
                                      a[2] + f * (b[2] - a[2]), fx, fy, cx, cy, width, height):
                    break
                good = k
            if good == 0:
                continue
            f = good / n_steps
            for r in range(3):
                if vs:
                    out_e[count, r] = starts[i, r] + f * (ends[i, r] - starts[i, r])
                else:
                    out_s[count, r] = ends[i, r] + f * (starts[i, r] - ends[i, r])
        out_ids[count] = i
        count += 1
    return out_ids[:count], out_s[:count], out_e[:count]


@njit(cache=True, error_model="numpy")
def best_matches(H, ds, de, starts, ends, R, t, fx, fy, cx, cy, ids, theta0, d0, min_proj):
    """Winning visible line per detection: smallest d, then largest overlap, then smallest id.

    Returns ``(choice, theta, d, overlap, us, ue)``; ``choice`` is -1 where
    nothing passes and ``us``/``ue`` are the projected line endpoints.
    """
    m = H.shape[0]
    n = starts.shape[0]
    su, sv, eu, ev = np.empty(n), np.empty(n), np.empty(n), np.empty(n)
    for j in range(n):
        su[j], sv[j] = _project(starts[j], R, t, fx, fy, cx, cy)
        eu[j], ev[j] = _project(ends[j], R, t, fx, fy, cx, cy)
    choice = np.full(m, -1, dtype=np.int64)
    best_theta = np.zeros(m)
    best_d = np.zeros(m)
    best_ov = np.zeros(m)
    ux, uy = eu - su, ev - sv
    nu = np.empty(n)
    for j in range(n):
        nu[j] = math.hypot(ux[j], uy[j])
    # acos is monotone; the margin keeps this a strict superset of theta < theta0
    cos_floor = math.cos(theta0) - 1e-9
    dist = np.empty(n)
    for i in range(m):
        A, B, C = H[i, 0], H[i, 1], H[i, 2]
        # branch-free pass so the common rejection vectorizes
        for j in range(n):
            dist[j] = abs(A * su[j] + B * sv[j] + C) + abs(A * eu[j] + B * ev[j] + C)
        tx = de[i, 0] - ds[i, 0]
        ty = de[i, 1] - ds[i, 1]
        lt = math.hypot(tx, ty)
        L2 = lt * lt
        for j in range(n):
            d = dist[j]
            if not d < d0 or nu[j] < min_proj:
                continue
            c = abs(tx * ux[j] + ty * uy[j]) / (lt * nu[j])
            if c < cos_floor:
                continue
            theta = math.acos(min(c, 1.0))
            if not theta < theta0:
                continue
            a_s = min(1.0, max(0.0, ((su[j] - ds[i, 0]) * tx + (sv[j] - ds[i, 1]) * ty) / L2))
            a_e = min(1.0, max(0.0, ((eu[j] - ds[i, 0]) * tx + (ev[j] - ds[i, 1]) * ty) / L2))
            ov = abs(a_s - a_e) * lt
            k = choice[i]
            if k < 0 or d < best_d[i] or (d == best_d[i] and (ov > best_ov[i] or (ov == best_ov[i] and ids[j] < ids[k]))):
                choice[i] = j
                best_theta[i] = theta
                best_d[i] = d
                best_ov[i] = ov
    us = np.empty((n, 2))
    ue = np.empty((n, 2))
    us[:, 0], us[:, 1], ue[:, 0], ue[:, 1] = su, sv, eu, ev
    return choice, best_theta, best_d, best_ov, us, ue


@njit(cache=True)
def window_residuals(P, H, entry_of, Rd, td, R, t, fx, fy, cx, cy, min_depth, saturation, with_jacobian):
    """Signed endpoint-to-line residuals over a window, and their Jacobian w.r.t. a left twist on ``(R, t)``.

    Row ``2*i + e`` belongs to endpoint ``e`` of correspondence ``i``; ``entry_of[i]``
    selects the offset ``(Rd, td)`` of its window entry. Saturated rows get
    ``saturation`` and a zero Jacobian row.
    """
    m = P.shape[0]
    r = np.empty(2 * m)
    bad = np.zeros((m, 2), dtype=np.bool_)
    J = np.zeros((2 * m if with_jacobian else 0, 6))
    q = np.empty(3)
    qn = np.empty(3)
    for i in range(m):
        k = entry_of[i]
        A, B, C = H[i, 0], H[i, 1], H[i, 2]
        Afx, Bfy = A * fx, B * fy
        for e in range(2):
            row = 2 * i + e
            for a in range(3):
                q[a] = R[a, 0] * P[i, e, 0] + R[a, 1] * P[i, e, 1] + R[a, 2] * P[i, e, 2] + t[a]
            for a in range(3):
                qn[a] = Rd[k, a, 0] * q[0] + Rd[k, a, 1] * q[1] + Rd[k, a, 2] * q[2] + td[k, a]
            if qn[2] <= min_depth:
                bad[i, e] = True
                r[row] = saturation
                continue
            inv_z = 1.0 / qn[2]
            r[row] = Afx * qn[0] * inv_z + Bfy * qn[1] * inv_z + (A * cx + B * cy + C)
            if with_jacobian:
                g0 = Afx * inv_z
                g1 = Bfy * inv_z
                g2 = -(Afx * qn[0] + Bfy * qn[1]) * inv_z * inv_z
                # dr/dq through the entry offset, then dq/dxi = [-[q]x | I]
                ax = g0 * Rd[k, 0, 0] + g1 * Rd[k, 1, 0] + g2 * Rd[k, 2, 0]
                ay = g0 * Rd[k, 0, 1] + g1 * Rd[k, 1, 1] + g2 * Rd[k, 2, 1]
                az = g0 * Rd[k, 0, 2] + g1 * Rd[k, 1, 2] + g2 * Rd[k, 2, 2]
                J[row, 0] = q[1] * az - q[2] * ay
                J[row, 1] = q[2] * ax - q[0] * az
                J[row, 2] = q[0] * ay - q[1] * ax
                J[row, 3] = ax
                J[row, 4] = ay
                J[row, 5] = az
    return r, bad, J
