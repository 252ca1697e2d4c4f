"""numba kernels for ray marching, accumulation and derivative passes.

Every batched pass splits the rays into a fixed number of contiguous chunks.
Each chunk owns a private output row, and rows are summed in chunk order
afterwards, so results depend on the chunk count but never on scheduling.
"""
import numpy as np
from numba import njit, prange

FP = 8  # footprint entries per sample; env samples use 4 and pad with weight 0
GRID, ENV = 0, 1

MODE_RESIDUALS = 0
MODE_RHS = 1
MODE_JTJ = 2
MODE_DIAG = 3

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def hash_uniform(key, index, counter, seed, stream):
    """Counter-based uniform in [0, 1) from (ray key, sample index, counter, seed, stream)."""
    h = _mix64(np.uint64(seed) * _GOLDEN + np.uint64(stream))
    h = _mix64(h ^ np.uint64(key))
    h = _mix64(h ^ (np.uint64(counter) * _GOLDEN))
    h = _mix64(h + np.uint64(index))
    return np.float64(h >> np.uint64(11)) * _INV53


@njit(cache=True)
def pixel_jitter(keys, counter, seed, out):
    for i in range(keys.shape[0]):
        out[i, 0] = hash_uniform(keys[i], 0, counter, seed, 1)
        out[i, 1] = hash_uniform(keys[i], 1, counter, seed, 1)


@njit(cache=True)
def slab(o, d, lo, hi):
    """Slab test. Returns (hit, t_near, t_far); t_near may be negative."""
    t0 = -np.inf
    t1 = np.inf
    for a in range(3):
        if d[a] != 0.0:
            inv = 1.0 / d[a]
            ta = (lo[a] - o[a]) * inv
            tb = (hi[a] - o[a]) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
        elif o[a] < lo[a] or o[a] > hi[a]:
            return False, 0.0, 0.0
    if t0 > t1 or t1 < 0.0:
        return False, 0.0, 0.0
    return True, t0, t1


@njit(cache=True)
def _trilinear(p, lo, dims, cell, cells_out, w_out):
    X, Y = dims[0], dims[1]
    i = np.empty(3, np.int64)
    fr = np.empty(3)
    for a in range(3):
        f = (p[a] - lo[a]) / cell[a] - 0.5
        if f < 0.0:
            f = 0.0
        top = dims[a] - 1.0
        if f > top:
            f = top
        ia = int(np.floor(f))
        if ia > dims[a] - 2:
            ia = dims[a] - 2
        i[a] = ia
        fr[a] = f - ia
    m = 0
    for bz in range(2):
        wz = fr[2] if bz else 1.0 - fr[2]
        for by in range(2):
            wy = fr[1] if by else 1.0 - fr[1]
            for bx in range(2):
                wx = fr[0] if bx else 1.0 - fr[0]
                cells_out[m] = ((i[2] + bz) * Y + (i[1] + by)) * X + (i[0] + bx)
                w_out[m] = wx * wy * wz
                m += 1


@njit(cache=True)
def _face_bilinear(p, center, half, s, cell_off, cells_out, w_out):
    """Bilinear footprint on the cube face hit at world point ``p``."""
    loc = np.empty(3)
    for a in range(3):
        loc[a] = (p[a] - center[a]) / half
    ax = 0
    if abs(loc[1]) > abs(loc[ax]):
        ax = 1
    if abs(loc[2]) > abs(loc[ax]):
        ax = 2
    face = 2 * ax + (0 if loc[ax] >= 0.0 else 1)
    ua = 1 if ax == 0 else 0
    va = 1 if ax == 2 else 2
    uv = np.empty(2)
    uv[0] = loc[ua]
    uv[1] = loc[va]
    idx = np.empty(2, np.int64)
    fr = np.empty(2)
    for a in range(2):
        c = uv[a]
        if c < -1.0:
            c = -1.0
        elif c > 1.0:
            c = 1.0
        f = (c + 1.0) * 0.5 * s - 0.5
        if f < 0.0:
            f = 0.0
        if f > s - 1.0:
            f = s - 1.0
        ia = int(np.floor(f))
        if ia > s - 2:
            ia = s - 2
        idx[a] = ia
        fr[a] = f - ia
    m = 0
    for bv in range(2):
        wv = fr[1] if bv else 1.0 - fr[1]
        for bu in range(2):
            wu = fr[0] if bu else 1.0 - fr[0]
            cells_out[m] = cell_off + (face * s + idx[1] + bv) * s + idx[0] + bu
            w_out[m] = wu * wv
            m += 1
    for m in range(4, FP):
        cells_out[m] = cells_out[0]
        w_out[m] = 0.0


@njit(cache=True)
def march(o, d, key, lo, hi, dims, cell, lhalf, lres, loff, center,
          step, jitter, counter, seed, cells, wts, delta, tval):
    """Fill sample buffers for one ray; returns (n_samples, n_grid, t_near, t_far).

    Grid samples come first: segment k spans [k*step, (k+1)*step] from the
    entry point (the last one cut at the exit) and its sample sits at the
    segment midpoint shifted by eta*step, eta ~ U(-0.5, 0.5). Env samples
    follow, one per layer at the ray's exit point, with unit delta.
    """
    cap = delta.shape[0]
    n = 0
    p = np.empty(3)
    hit, tn, tf = slab(o, d, lo, hi)
    t_near = 0.0
    t_far = 0.0
    if hit:
        if tn < 0.0:
            tn = 0.0
        t_near = tn
        t_far = tf
        length = tf - tn
        K = int(np.ceil(length / step))
        for k in range(K):
            seg0 = k * step
            dl = length - seg0
            if dl > step:
                dl = step
            if dl <= 1e-9 * step:
                break
            if n >= cap:
                raise ValueError("sample buffer overflow")
            eta = 0.0
            if jitter:
                eta = hash_uniform(key, k, counter, seed, 2) - 0.5
            frac = 0.5 + eta
            t = tn + seg0 + frac * dl
            for a in range(3):
                p[a] = o[a] + t * d[a]
            _trilinear(p, lo, dims, cell, cells[n], wts[n])
            delta[n] = dl
            tval[n] = t
            n += 1
    n_grid = n
    t_prev = tval[n - 1] if n > 0 else 0.0
    for k in range(lhalf.shape[0]):
        h = lhalf[k]
        lo_k = center - h
        hi_k = center + h
        hit_k, _, tfk = slab(o, d, lo_k, hi_k)
        if not hit_k or tfk <= 0.0 or tfk <= t_prev:
            continue
        if n >= cap:
            raise ValueError("sample buffer overflow")
        for a in range(3):
            p[a] = o[a] + tfk * d[a]
        _face_bilinear(p, center, h, lres[k], loff[k], cells[n], wts[n])
        delta[n] = 1.0
        tval[n] = tfk
        t_prev = tfk
        n += 1
    return n, n_grid, t_near, t_far


@njit(cache=True)
def interpolate(params, cells, wts, n, sig, col):
    """Sigma and color of every sample through its footprint."""
    for j in range(n):
        s = 0.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        for m in range(FP):
            w = wts[j, m]
            if w == 0.0:
                continue
            b = 4 * cells[j, m]
            c0 += w * params[b]
            c1 += w * params[b + 1]
            c2 += w * params[b + 2]
            s += w * params[b + 3]
        sig[j] = s
        col[j, 0] = c0
        col[j, 1] = c1
        col[j, 2] = c2


@njit(cache=True)
def composite(sig, col, delta, n, n_grid, bg, out):
    """Front-to-back accumulation. Writes color into ``out``; returns (T_final, T_grid)."""
    T = 1.0
    T_grid = 1.0
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    for j in range(n):
        if j == n_grid:
            T_grid = T
        e = np.exp(-sig[j] * delta[j])
        w = T * (1.0 - e)
        for c in range(3):
            out[c] += w * col[j, c]
        T *= e
    if n_grid == n:
        T_grid = T
    for c in range(3):
        out[c] += T * bg[c]
    return T, T_grid


@njit(cache=True)
def aux_value(T, lam):
    x = T - 0.5
    return lam * (-4.0 * x * x + 1.0)


@njit(cache=True)
def backward_sweep(sig, col, delta, n, n_grid, bg, T_final, T_grid, lam, dHc, dHs, daux):
    """Reverse sweep for the partials of accumulated color and aux residual.

    ``V`` tracks the optical depth in front of sample i, ``G`` the radiance
    accumulated behind it (seeded with the background term, which also
    depends on every sigma).
    """
    V = 0.0
    for j in range(n):
        V += sig[j] * delta[j]
    G0 = T_final * bg[0]
    G1 = T_final * bg[1]
    G2 = T_final * bg[2]
    daux_dT = lam * (-8.0 * (T_grid - 0.5))
    for j in range(n - 1, -1, -1):
        sd = sig[j] * delta[j]
        V -= sd
        if V < 0.0:
            V = 0.0
        T = np.exp(-V)
        e = np.exp(-sd)
        a = 1.0 - e
        w = T * a
        dHc[j] = w
        te = T * delta[j] * e
        dHs[j, 0] = te * col[j, 0] - delta[j] * G0
        dHs[j, 1] = te * col[j, 1] - delta[j] * G1
        dHs[j, 2] = te * col[j, 2] - delta[j] * G2
        G0 += w * col[j, 0]
        G1 += w * col[j, 1]
        G2 += w * col[j, 2]
        if j < n_grid:
            daux[j] = daux_dT * (-delta[j] * T_grid)
        else:
            daux[j] = 0.0


@njit(cache=True, parallel=True)
def ray_pass(mode, origins, dirs, targets, keys, lo, hi, dims, cell, lhalf, lres, loff,
             center, params, pvec, bg, lam, step, jitter, counter, seed, n_chunks, cap,
             out_res, out_tgrid, out_vec):
    """Batched per-ray pass.

    MODE_RESIDUALS: residuals (R, 4) and grid transmittance per ray.
    MODE_RHS:  out_vec[chunk] -= sum_i grad r_i * r_i
    MODE_JTJ:  out_vec[chunk] += sum_i grad r_i * (grad r_i . pvec)
    MODE_DIAG: out_vec[chunk] += sum_i (d r_i / d x_j)^2
    """
    R = origins.shape[0]
    n_cells = params.shape[0] // 4
    for ch in prange(n_chunks):
        a0 = (ch * R) // n_chunks
        a1 = ((ch + 1) * R) // n_chunks
        cells = np.empty((cap, FP), np.int64)
        wts = np.empty((cap, FP))
        delta = np.empty(cap)
        tval = np.empty(cap)
        sig = np.empty(cap)
        col = np.empty((cap, 3))
        dHc = np.empty(cap)
        dHs = np.empty((cap, 3))
        daux = np.empty(cap)
        H = np.empty(3)
        r = np.empty(4)
        if mode == MODE_DIAG:
            stamp = np.full(n_cells, -1, np.int64)
            local = np.empty(n_cells, np.int64)
            touched = np.empty(cap * FP, np.int64)
            acc = np.empty((cap * FP, 7))
        else:
            stamp = np.empty(0, np.int64)
            local = np.empty(0, np.int64)
            touched = np.empty(0, np.int64)
            acc = np.empty((0, 7))
        out = out_vec[ch]
        for i in range(a0, a1):
            n, n_grid, _, _ = march(origins[i], dirs[i], keys[i], lo, hi, dims, cell, lhalf, lres,
                                    loff, center, step, jitter, counter, seed, cells, wts, delta, tval)
            interpolate(params, cells, wts, n, sig, col)
            T_final, T_grid = composite(sig, col, delta, n, n_grid, bg, H)
            for c in range(3):
                r[c] = H[c] - targets[i, c]
            r[3] = aux_value(T_grid, lam)
            if mode == MODE_RESIDUALS:
                for c in range(4):
                    out_res[i, c] = r[c]
                out_tgrid[i] = T_grid
                continue
            if n == 0:
                continue
            backward_sweep(sig, col, delta, n, n_grid, bg, T_final, T_grid, lam, dHc, dHs, daux)
            if mode == MODE_RHS:
                for j in range(n):
                    gs = dHs[j, 0] * r[0] + dHs[j, 1] * r[1] + dHs[j, 2] * r[2] + daux[j] * r[3]
                    for m in range(FP):
                        w = wts[j, m]
                        if w == 0.0:
                            continue
                        b = 4 * cells[j, m]
                        for c in range(3):
                            out[b + c] -= w * dHc[j] * r[c]
                        out[b + 3] -= w * gs
            elif mode == MODE_JTJ:
                d0 = 0.0
                d1 = 0.0
                d2 = 0.0
                d3 = 0.0
                for j in range(n):
                    for m in range(FP):
                        w = wts[j, m]
                        if w == 0.0:
                            continue
                        b = 4 * cells[j, m]
                        ps = pvec[b + 3]
                        d0 += w * (dHc[j] * pvec[b] + dHs[j, 0] * ps)
                        d1 += w * (dHc[j] * pvec[b + 1] + dHs[j, 1] * ps)
                        d2 += w * (dHc[j] * pvec[b + 2] + dHs[j, 2] * ps)
                        d3 += w * daux[j] * ps
                for j in range(n):
                    gs = dHs[j, 0] * d0 + dHs[j, 1] * d1 + dHs[j, 2] * d2 + daux[j] * d3
                    for m in range(FP):
                        w = wts[j, m]
                        if w == 0.0:
                            continue
                        b = 4 * cells[j, m]
                        out[b] += w * dHc[j] * d0
                        out[b + 1] += w * dHc[j] * d1
                        out[b + 2] += w * dHc[j] * d2
                        out[b + 3] += w * gs
            else:
                # merge repeated cells within the ray before squaring
                nt = 0
                for j in range(n):
                    for m in range(FP):
                        w = wts[j, m]
                        if w == 0.0:
                            continue
                        cid = cells[j, m]
                        if stamp[cid] != i:
                            stamp[cid] = i
                            local[cid] = nt
                            touched[nt] = cid
                            for q in range(7):
                                acc[nt, q] = 0.0
                            nt += 1
                        q0 = local[cid]
                        acc[q0, 0] += w * dHc[j]
                        acc[q0, 1] += w * dHc[j]
                        acc[q0, 2] += w * dHc[j]
                        acc[q0, 3] += w * dHs[j, 0]
                        acc[q0, 4] += w * dHs[j, 1]
                        acc[q0, 5] += w * dHs[j, 2]
                        acc[q0, 6] += w * daux[j]
                for q0 in range(nt):
                    b = 4 * touched[q0]
                    out[b] += acc[q0, 0] ** 2
                    out[b + 1] += acc[q0, 1] ** 2
                    out[b + 2] += acc[q0, 2] ** 2
                    out[b + 3] += acc[q0, 3] ** 2 + acc[q0, 4] ** 2 + acc[q0, 5] ** 2 + acc[q0, 6] ** 2


@njit(cache=True, parallel=True)
def render_pass(origins, dirs, lo, hi, dims, cell, lhalf, lres, loff, center, params, bg,
                step, threshold, n_chunks, cap, out_rgb, out_opacity):
    """Deterministic render; grid part dropped where its opacity is below ``threshold``."""
    R = origins.shape[0]
    for ch in prange(n_chunks):
        a0 = (ch * R) // n_chunks
        a1 = ((ch + 1) * R) // n_chunks
        cells = np.empty((cap, FP), np.int64)
        wts = np.empty((cap, FP))
        delta = np.empty(cap)
        tval = np.empty(cap)
        sig = np.empty(cap)
        col = np.empty((cap, 3))
        for i in range(a0, a1):
            n, n_grid, _, _ = march(origins[i], dirs[i], np.uint64(0), lo, hi, dims, cell, lhalf,
                                    lres, loff, center, step, False, 0, 0, cells, wts, delta, tval)
            interpolate(params, cells, wts, n, sig, col)
            Hg0 = 0.0
            Hg1 = 0.0
            Hg2 = 0.0
            T = 1.0
            for j in range(n_grid):
                e = np.exp(-sig[j] * delta[j])
                w = T * (1.0 - e)
                Hg0 += w * col[j, 0]
                Hg1 += w * col[j, 1]
                Hg2 += w * col[j, 2]
                T *= e
            Tg = T
            He0 = 0.0
            He1 = 0.0
            He2 = 0.0
            T = 1.0
            for j in range(n_grid, n):
                e = np.exp(-sig[j] * delta[j])
                w = T * (1.0 - e)
                He0 += w * col[j, 0]
                He1 += w * col[j, 1]
                He2 += w * col[j, 2]
                T *= e
            Be0 = He0 + T * bg[0]
            Be1 = He1 + T * bg[1]
            Be2 = He2 + T * bg[2]
            opacity = 1.0 - Tg
            out_opacity[i] = opacity
            if opacity < threshold:
                out_rgb[i, 0] = Be0
                out_rgb[i, 1] = Be1
                out_rgb[i, 2] = Be2
            else:
                out_rgb[i, 0] = Hg0 + Tg * Be0
                out_rgb[i, 1] = Hg1 + Tg * Be1
                out_rgb[i, 2] = Hg2 + Tg * Be2
