"""Compiled inner loops.

All kernels take plain float64 arrays. Rasters are ``[row, col]`` with
``origin`` = world position of pixel (0, 0) and square ``pitch``; SOS
samples falling off the raster read as ``v0``.
"""
import math

import numba
import numpy as np

_JIT = dict(cache=True)


@numba.njit(**_JIT)
def _disc_interval(px, py, ux, uy, cx, cy, r, tmax):
    """Parameter interval of the ray p + t*u (0 <= t <= tmax) inside a disc."""
    dx = px - cx
    dy = py - cy
    b = ux * dx + uy * dy
    c = dx * dx + dy * dy - r * r
    disc = b * b - c
    if disc <= 0.0:
        return 0.0, 0.0
    s = math.sqrt(disc)
    lo = max(-b - s, 0.0)
    hi = min(-b + s, tmax)
    if hi <= lo:
        return 0.0, 0.0
    return lo, hi


@numba.njit(**_JIT)
def _bilinear(sos, fx, fy, v0):
    h, w = sos.shape
    c0 = math.floor(fx)
    r0 = math.floor(fy)
    ax = fx - c0
    ay = fy - r0
    out = 0.0
    for dr in range(2):
        wy = ay if dr else 1.0 - ay
        rr = r0 + dr
        for dc in range(2):
            wx = ax if dc else 1.0 - ax
            cc = c0 + dc
            if 0 <= rr < h and 0 <= cc < w:
                out += wx * wy * sos[rr, cc]
            else:
                out += wx * wy * v0
    return out


@numba.njit(**_JIT)
def _n_steps(length, step):
    n = int(math.ceil(length / step - 1e-12))
    return max(n, 1)


@numba.njit(**_JIT)
def ray_wavefront(px, py, ux, uy, tmax, sos, ox, oy, pitch, v0, cx, cy, r, step):
    """Integral of (1 - v0/v) along p + t*u, t in [0, tmax], clipped to the mask disc."""
    lo, hi = _disc_interval(px, py, ux, uy, cx, cy, r, tmax)
    if hi <= lo:
        return 0.0
    n = _n_steps(hi - lo, step)
    dl = (hi - lo) / n
    acc = 0.0
    for s in range(n):
        t = lo + (s + 0.5) * dl
        fx = (px + t * ux - ox) / pitch
        fy = (py + t * uy - oy) / pitch
        v = _bilinear(sos, fx, fy, v0)
        acc += 1.0 - v0 / v
    return acc * dl


@numba.njit(**_JIT)
def _ring_exit(px, py, ux, uy, ring_r):
    b = px * ux + py * uy
    c = px * px + py * py - ring_r * ring_r
    return -b + math.sqrt(b * b - c)


@numba.njit(parallel=True, **_JIT)
def wavefront_profiles(points, angles, ring_r, sos, ox, oy, pitch, v0, cx, cy, r, step):
    """Wavefront error w[i, a] for every point and every ray angle."""
    npt = points.shape[0]
    na = angles.shape[0]
    out = np.zeros((npt, na))
    for i in numba.prange(npt):
        px = points[i, 0]
        py = points[i, 1]
        for a in range(na):
            ux = math.cos(angles[a])
            uy = math.sin(angles[a])
            tmax = _ring_exit(px, py, ux, uy, ring_r)
            out[i, a] = ray_wavefront(px, py, ux, uy, tmax, sos, ox, oy, pitch, v0, cx, cy, r, step)
    return out


@numba.njit(**_JIT)
def _scatter_ray(px, py, ux, uy, tmax, sos, ox, oy, pitch, v0, cx, cy, r, step, scale, out):
    """Accumulate scale * d(ray_wavefront)/d(sos) into ``out``."""
    lo, hi = _disc_interval(px, py, ux, uy, cx, cy, r, tmax)
    if hi <= lo or scale == 0.0:
        return
    h, w = sos.shape
    n = _n_steps(hi - lo, step)
    dl = (hi - lo) / n
    for s in range(n):
        t = lo + (s + 0.5) * dl
        fx = (px + t * ux - ox) / pitch
        fy = (py + t * uy - oy) / pitch
        v = _bilinear(sos, fx, fy, v0)
        g = scale * dl * v0 / (v * v)
        c0 = math.floor(fx)
        r0 = math.floor(fy)
        ax = fx - c0
        ay = fy - r0
        for dr in range(2):
            wy = ay if dr else 1.0 - ay
            rr = r0 + dr
            for dc in range(2):
                wx = ax if dc else 1.0 - ax
                cc = c0 + dc
                if 0 <= rr < h and 0 <= cc < w:
                    out[rr, cc] += g * wx * wy


@numba.njit(**_JIT)
def wavefront_vjp(points, angles, ring_r, sos, ox, oy, pitch, v0, cx, cy, r, step, gw):
    """Sum over points/angles of gw[i, a] * dw[i, a]/d(sos), as a raster.

    Serial on purpose: the scatter into one accumulator keeps a fixed order.
    """
    out = np.zeros(sos.shape)
    for i in range(points.shape[0]):
        px = points[i, 0]
        py = points[i, 1]
        for a in range(angles.shape[0]):
            ux = math.cos(angles[a])
            uy = math.sin(angles[a])
            tmax = _ring_exit(px, py, ux, uy, ring_r)
            _scatter_ray(px, py, ux, uy, tmax, sos, ox, oy, pitch, v0, cx, cy, r, step,
                         gw[i, a], out)
    return out


@numba.njit(parallel=True, **_JIT)
def segment_wavefronts(src, dst, sos, ox, oy, pitch, v0, cx, cy, r, step):
    """w for every (source, destination) pair; returns (S, D) wavefronts and lengths."""
    ns = src.shape[0]
    nd = dst.shape[0]
    w = np.zeros((ns, nd))
    dist = np.zeros((ns, nd))
    for i in numba.prange(ns):
        for j in range(nd):
            dx = dst[j, 0] - src[i, 0]
            dy = dst[j, 1] - src[i, 1]
            L = math.sqrt(dx * dx + dy * dy)
            dist[i, j] = L
            if L == 0.0:
                continue
            w[i, j] = ray_wavefront(src[i, 0], src[i, 1], dx / L, dy / L, L, sos,
                                    ox, oy, pitch, v0, cx, cy, r, step)
    return w, dist


@numba.njit(parallel=True, **_JIT)
def synthesize(tof, amp, n_samples, t0, dt, sigma):
    """Sum of -2 d/dt of Gaussian-derivative pulses; tof and amp are (S, N_t)."""
    ns, nt = tof.shape
    out = np.zeros((nt, n_samples))
    half = 6.0 * sigma
    for n in numba.prange(nt):
        for s in range(ns):
            a = amp[s, n]
            if a == 0.0:
                continue
            tau = tof[s, n]
            k0 = max(int(math.ceil((tau - half - t0) / dt)), 0)
            k1 = min(int(math.floor((tau + half - t0) / dt)), n_samples - 1)
            for k in range(k0, k1 + 1):
                u = (t0 + k * dt - tau) / sigma
                out[n, k] += a * 2.0 * (1.0 - u * u) * math.exp(-0.5 * u * u) / sigma
    return out


@numba.njit(**_JIT)
def _sample(sig, n, f):
    ns = sig.shape[1]
    k = math.floor(f)
    if k < 0 or k > ns - 1:
        return 0.0
    a = f - k
    lo = sig[n, k]
    hi = sig[n, k + 1] if k + 1 < ns else 0.0
    return (1.0 - a) * lo + a * hi


@numba.njit(parallel=True, **_JIT)
def das_stack(sig, t0, dt, tx, ty, xs, ys, v0, delays):
    """Delay-and-sum images (M, H, W); delays and coordinates in mm, v0 in m/s."""
    nt = sig.shape[0]
    ns = sig.shape[1]
    m = delays.shape[0]
    h = ys.shape[0]
    w = xs.shape[0]
    acc = np.zeros((h, w, m))
    scale = 1e-3 / (v0 * dt)
    shift = np.empty(m)
    for j in range(m):
        shift[j] = -delays[j] * scale - t0 / dt
    for r in numba.prange(h):
        y = ys[r]
        for c in range(w):
            x = xs[c]
            for n in range(nt):
                f0 = math.sqrt((x - tx[n]) ** 2 + (y - ty[n]) ** 2) * scale
                for j in range(m):
                    f = f0 + shift[j]
                    k = math.floor(f)
                    if k < 0 or k > ns - 1:
                        continue
                    a = f - k
                    hi = sig[n, k + 1] if k + 1 < ns else 0.0
                    acc[r, c, j] += (1.0 - a) * sig[n, k] + a * hi
    out = np.empty((m, h, w))
    for j in range(m):
        out[j] = acc[:, :, j]
    return out


@numba.njit(**_JIT)
def chord_in_disc(px, py, qx, qy, cx, cy, r):
    """Length of the segment p->q lying inside the disc."""
    dx = qx - px
    dy = qy - py
    L = math.sqrt(dx * dx + dy * dy)
    if L == 0.0:
        return 0.0
    lo, hi = _disc_interval(px, py, dx / L, dy / L, cx, cy, r, L)
    return hi - lo


@numba.njit(parallel=True, **_JIT)
def dual_sos_das(sig, t0, dt, tx, ty, xs, ys, v0, cx, cy, rb, vb):
    nt = sig.shape[0]
    h = ys.shape[0]
    w = xs.shape[0]
    out = np.zeros((h, w))
    for r in numba.prange(h):
        y = ys[r]
        for c in range(w):
            x = xs[c]
            acc = 0.0
            for n in range(nt):
                dist = math.sqrt((x - tx[n]) ** 2 + (y - ty[n]) ** 2)
                lin = chord_in_disc(x, y, tx[n], ty[n], cx, cy, rb)
                t = ((dist - lin) / v0 + lin / vb) * 1e-3
                acc += _sample(sig, n, (t - t0) / dt)
            out[r, c] = acc
    return out


@numba.njit(**_JIT)
def _raw_transfer(w, i, i0a, i1a, fa, i0b, i1b, fb, k, d, e1, e2, h):
    wa = w[i, i0a] * (1.0 - fa) + w[i, i1a] * fa
    wb = w[i, i0b] * (1.0 - fb) + w[i, i1b] * fb
    for j in range(d.shape[0]):
        p1 = -k * (d[j] - wa)
        p2 = k * (d[j] - wb)
        e1[j] = complex(math.cos(p1), math.sin(p1))
        e2[j] = complex(math.cos(p2), math.sin(p2))
        h[j] = 0.5 * (e1[j] + e2[j])


@numba.njit(**_JIT)
def _push(gw, i, i0a, i1a, fa, i0b, i1b, fb, k, G, e1, e2, scale):
    ga = 0.0
    gb = 0.0
    for j in range(G.shape[0]):
        c = G[j].conjugate() * scale
        ga += (c * (0.5j * k) * e1[j]).real
        gb += (c * (-0.5j * k) * e2[j]).real
    gw[i, i0a] += (1.0 - fa) * ga
    gw[i, i1a] += fa * ga
    gw[i, i0b] += (1.0 - fb) * gb
    gw[i, i1b] += fb * gb


@numba.njit(parallel=True, **_JIT)
def fused_data_loss(Y, w, delays, kmag, weight, ia0, ia1, fa, ib0, ib1, fb, sym,
                    pa0, pa1, pfa, pb0, pb1, pfb, eps, full_chain):
    """Per-patch |k|-weighted multichannel residual and its gradient on w.

    Works on the half spectrum (rfft2 layout): ``weight`` counts each bin's
    conjugate twin, and bins flagged in ``sym`` are averaged with the
    conjugate of the raw transfer function at their full-grid mirror
    (nodes ``pa*``/``pb*``), as the full-grid symmetrisation does.
    """
    n, m, p, ph = Y.shape
    loss = np.zeros(n)
    gw = np.zeros(w.shape)
    for i in numba.prange(n):
        e1 = np.empty(m, dtype=np.complex128)
        e2 = np.empty(m, dtype=np.complex128)
        h = np.empty(m, dtype=np.complex128)
        e1m = np.empty(m, dtype=np.complex128)
        e2m = np.empty(m, dtype=np.complex128)
        hm = np.empty(m, dtype=np.complex128)
        G = np.empty(m, dtype=np.complex128)
        Gm = np.empty(m, dtype=np.complex128)
        H = np.empty(m, dtype=np.complex128)
        acc = 0.0
        for r in range(p):
            for c in range(ph):
                k = kmag[r, c]
                wk = weight[r, c] * k
                _raw_transfer(w, i, ia0[r, c], ia1[r, c], fa[r, c], ib0[r, c], ib1[r, c], fb[r, c],
                              k, delays, e1, e2, h)
                flag = sym[r, c]
                if flag:
                    _raw_transfer(w, i, pa0[r, c], pa1[r, c], pfa[r, c], pb0[r, c], pb1[r, c],
                                  pfb[r, c], k, delays, e1m, e2m, hm)
                    for j in range(m):
                        H[j] = 0.5 * (h[j] + hm[j].conjugate())
                else:
                    for j in range(m):
                        H[j] = h[j]
                num = 0j
                den = eps * m
                for j in range(m):
                    num += H[j].conjugate() * Y[i, j, r, c]
                    den += H[j].real ** 2 + H[j].imag ** 2
                X = num / den
                gX = 0j
                for j in range(m):
                    R = Y[i, j, r, c] - H[j] * X
                    acc += wk * (R.real ** 2 + R.imag ** 2)
                    G[j] = -2.0 * wk * R * X.conjugate()
                    gX += -2.0 * wk * R * H[j].conjugate()
                if full_chain:
                    s = (gX.conjugate() * X).real
                    for j in range(m):
                        G[j] += (gX.conjugate() * Y[i, j, r, c] - 2.0 * s * H[j]) / den
                if flag:
                    for j in range(m):
                        Gm[j] = G[j].conjugate()
                    _push(gw, i, ia0[r, c], ia1[r, c], fa[r, c], ib0[r, c], ib1[r, c], fb[r, c],
                          k, G, e1, e2, 0.5)
                    _push(gw, i, pa0[r, c], pa1[r, c], pfa[r, c], pb0[r, c], pb1[r, c], pfb[r, c],
                          k, Gm, e1m, e2m, 0.5)
                else:
                    _push(gw, i, ia0[r, c], ia1[r, c], fa[r, c], ib0[r, c], ib1[r, c], fb[r, c],
                          k, G, e1, e2, 1.0)
        loss[i] = acc
    return loss, gw
