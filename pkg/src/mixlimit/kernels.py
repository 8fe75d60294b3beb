"""Hot loops of the constraint reduction: hyperplane/box vertex enumeration and
sorted occlusion culling.

Each kernel has a plain-loop version (compiled with numba when available) and
a vectorised numpy version. ``MIXLIMIT_DISABLE_NUMBA=1`` selects numpy.
"""
import numpy as np

from ._accel import USE_NUMBA, maybe_njit

# corner snapping tolerance, relative to the box edge length
EDGE_TOL = 1e-12
# occlusion must clear the threshold by this (relative) margin
OCC_MARGIN = 1e-12
# minimum cosine between an entering row and the simplex edge direction
PIVOT_TOL = 1e-9


def _edge_vertices_loop(S, tau, u):
    m, N = S.shape
    nc = 1 << (N - 1)
    maxv = nc * N
    V = np.zeros((m, maxv, N))
    counts = np.zeros(m, dtype=np.int64)
    keys = np.full(m, np.inf)
    x = np.empty(N)
    for r in range(m):
        first_nz = N
        for k in range(N):
            if S[r, k] != 0.0:
                first_nz = k
                break
        cnt = 0
        for n in range(N):
            sn = S[r, n]
            if sn == 0.0:
                continue
            un = u[n]
            for b in range(nc):
                rest = 0.0
                bit = 0
                for k in range(N):
                    if k == n:
                        continue
                    if (b >> bit) & 1:
                        x[k] = u[k]
                        rest += S[r, k] * u[k]
                    else:
                        x[k] = 0.0
                    bit += 1
                xn = (tau[r] - rest) / sn
                if xn < -EDGE_TOL * un or xn > un * (1.0 + EDGE_TOL):
                    continue
                if xn <= EDGE_TOL * un or xn >= un * (1.0 - EDGE_TOL):
                    # box corner: emitted once, by the edge of the first nonzero coefficient
                    if first_nz < n:
                        continue
                    xn = 0.0 if xn <= EDGE_TOL * un else un
                x[n] = xn
                for k in range(N):
                    V[r, cnt, k] = x[k]
                cnt += 1
        counts[r] = cnt
        best = np.inf
        for v in range(cnt):
            acc = 0.0
            for k in range(N):
                acc += V[r, v, k] * V[r, v, k]
            if acc < best:
                best = acc
        if cnt:
            keys[r] = np.sqrt(best)
    return V, counts, keys


def _edge_vertices_numpy(S, tau, u):
    m, N = S.shape
    nc = 1 << (N - 1)
    bits = ((np.arange(nc)[:, None] >> np.arange(N - 1)[None, :]) & 1).astype(float)
    nz = S != 0.0
    first_nz = np.where(nz.any(axis=1), nz.argmax(axis=1), N)
    cand = np.zeros((m, N, nc, N))
    valid = np.zeros((m, N, nc), dtype=bool)
    for n in range(N):
        others = np.r_[0:n, n + 1:N]
        C = bits * u[others]
        rest = S[:, others] @ C.T
        sn = S[:, n][:, None]
        un = u[n]
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = (tau[:, None] - rest) / sn
        ok = (sn != 0.0) & (xn >= -EDGE_TOL * un) & (xn <= un * (1.0 + EDGE_TOL))
        lo = xn <= EDGE_TOL * un
        hi = xn >= un * (1.0 - EDGE_TOL)
        corner = lo | hi
        ok &= ~(corner & (first_nz[:, None] < n))
        xn = np.where(lo, 0.0, np.where(hi, un, xn))
        cand[:, n, :, others] = np.broadcast_to(C.T[:, None, :], (N - 1, m, nc))
        cand[:, n, :, n] = xn
        valid[:, n, :] = ok
    cand = cand.reshape(m, N * nc, N)
    valid = valid.reshape(m, N * nc)
    counts = valid.sum(axis=1).astype(np.int64)
    pos = np.cumsum(valid, axis=1) - 1
    rr, cc = np.nonzero(valid)
    V = np.zeros((m, N * nc, N))
    V[rr, pos[rr, cc]] = cand[rr, cc]
    norms = np.where(valid, np.sqrt(np.einsum("rvk,rvk->rv", cand, cand)), np.inf)
    keys = norms.min(axis=1) if m else np.zeros(0)
    return V, counts, keys


def _cull_sorted_loop(S, tau, V, counts, order):
    m = order.shape[0]
    N = S.shape[1]
    keep = np.zeros(S.shape[0], dtype=np.bool_)
    xi = np.empty(m, dtype=np.int64)
    nxi = 0
    for jj in range(m):
        j = order[jj]
        if counts[j] == 0:
            continue
        occluded = False
        for a in range(nxi):
            i = xi[a]
            thr = tau[i] + OCC_MARGIN * max(1.0, abs(tau[i]))
            above = True
            for v in range(counts[j]):
                val = 0.0
                for k in range(N):
                    val += S[i, k] * V[j, v, k]
                if not val > thr:
                    above = False
                    break
            if above:
                occluded = True
                break
        if not occluded:
            keep[j] = True
            xi[nxi] = j
            nxi += 1
    return keep


def _cull_sorted_numpy(S, tau, V, counts, order):
    keep = np.zeros(S.shape[0], dtype=bool)
    thr = tau + OCC_MARGIN * np.maximum(1.0, np.abs(tau))
    xi: list[int] = []
    for j in order:
        c = counts[j]
        if c == 0:
            continue
        if xi:
            vals = S[xi] @ V[j, :c].T
            if np.any(np.all(vals > thr[xi, None], axis=1)):
                continue
        keep[j] = True
        xi.append(int(j))
    return keep


edge_vertices_jit = maybe_njit(_edge_vertices_loop)
cull_sorted_jit = maybe_njit(_cull_sorted_loop)


def edge_vertices(S, tau, u):
    """Crossings of each row's hyperplane ``s . x = tau`` with the edges of [0, u].

    Returns ``(V, counts, keys)``: padded vertex array (rows x 2^(N-1) N x N),
    vertices per row, and the smallest vertex norm per row (inf when none).
    All ``u`` must be positive.
    """
    S = np.ascontiguousarray(S, dtype=np.float64)
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if USE_NUMBA:
        return edge_vertices_jit(S, tau, u)
    return _edge_vertices_numpy(S, tau, u)


def cull_sorted(S, tau, V, counts, order):
    """Greedy non-occluded set over rows visited in ``order`` (ascending key)."""
    S = np.ascontiguousarray(S, dtype=np.float64)
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    order = np.ascontiguousarray(order, dtype=np.int64)
    if USE_NUMBA:
        return cull_sorted_jit(S, tau, V, counts, order)
    return _cull_sorted_numpy(S, tau, V, counts, order)


def _overlap_add_loop(out, t0, starts, weights, window):
    """out[t - t0, n] += window[t - start] * weights[f, n] over each frame's span."""
    T, N = out.shape
    M = window.shape[0]
    for f in range(starts.shape[0]):
        s = starts[f]
        for i in range(M):
            t = s + i - t0
            if t < 0 or t >= T:
                continue
            wi = window[i]
            for n in range(N):
                out[t, n] += wi * weights[f, n]
    return out


def _overlap_add_numpy(out, t0, starts, weights, window):
    T = out.shape[0]
    M = window.shape[0]
    for s, x in zip(starts, weights):
        a, b = max(s - t0, 0), min(s - t0 + M, T)
        if b > a:
            out[a:b] += window[a - (s - t0):b - (s - t0), None] * x[None, :]
    return out


overlap_add_jit = maybe_njit(_overlap_add_loop)


def overlap_add(out, t0, starts, weights, window):
    """Accumulate windowed per-frame gains into ``out`` (rows are times t0, t0+1, ...)."""
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64).reshape(starts.size, -1)
    window = np.ascontiguousarray(window, dtype=np.float64)
    if USE_NUMBA:
        return overlap_add_jit(out, int(t0), starts, weights, window)
    return _overlap_add_numpy(out, int(t0), starts, weights, window)


def _support_lp_loop(S, tau, u, r, tol, max_iter):
    """max S[r] . x over the other rows and the box [0, u], by a vertex simplex.

    Constraints are indexed rows 0..m-1, then x_k <= u_k (m + k), then
    -x_k <= 0 (m + N + k). The walk starts at the origin with every lower
    bound active and pivots by Bland's rule. Returns (value, iterations);
    iterations < 0 flags a failure (singular basis or the cap was hit).
    """
    m, N = S.shape
    c = S[r]
    W = np.empty(N, dtype=np.int64)
    for k in range(N):
        W[k] = m + N + k
    x = np.zeros(N)
    B = np.zeros((N, N))
    hW = np.zeros(N)
    it = 0
    while it < max_iter:
        it += 1
        for a in range(N):
            g = W[a]
            for k in range(N):
                B[a, k] = 0.0
            if g < m:
                for k in range(N):
                    B[a, k] = S[g, k]
                hW[a] = tau[g]
            elif g < m + N:
                B[a, g - m] = 1.0
                hW[a] = u[g - m]
            else:
                B[a, g - m - N] = -1.0
                hW[a] = 0.0
        # the vertex is re-solved from its active set, so no drift accumulates
        x = np.linalg.solve(B, hW)
        lam = np.linalg.solve(B.T, c)
        leave = -1
        best = 1 << 62
        for a in range(N):
            if lam[a] < -tol and W[a] < best:
                best = W[a]
                leave = a
        if leave < 0:
            val = 0.0
            for k in range(N):
                val += c[k] * x[k]
            return val, it, x
        e = np.zeros(N)
        e[leave] = -1.0
        d = np.linalg.solve(B, e)
        dnorm = np.sqrt(np.sum(d * d))
        step = np.inf
        enter = -1
        for g in range(m + 2 * N):
            if g == r:
                continue
            inw = False
            for a in range(N):
                if W[a] == g:
                    inw = True
                    break
            if inw:
                continue
            gnorm = 1.0
            if g < m:
                gd = 0.0
                gx = 0.0
                gnorm = 0.0
                for k in range(N):
                    gd += S[g, k] * d[k]
                    gx += S[g, k] * x[k]
                    gnorm += S[g, k] * S[g, k]
                gnorm = np.sqrt(gnorm)
                slack = tau[g] - gx
            elif g < m + N:
                k = g - m
                gd = d[k]
                slack = u[k] - x[k]
            else:
                k = g - m - N
                gd = -d[k]
                slack = x[k]
            # pivots on nearly parallel rows would leave a near-singular basis
            if gd > PIVOT_TOL * gnorm * dnorm:
                t = max(slack, 0.0) / gd
                if enter < 0 or t < step - tol * (1.0 + step) or (
                        t <= step + tol * (1.0 + step) and g < enter):
                    step = t
                    enter = g
        if enter < 0:
            return np.inf, -it, x
        W[leave] = enter
    return np.nan, -it, x


support_lp_jit = maybe_njit(_support_lp_loop)


def _support_lp_highs(S, tau, u, r):
    from scipy.optimize import linprog

    others = np.r_[0:r, r + 1:S.shape[0]]
    res = linprog(-S[r], A_ub=S[others] if others.size else None,
                  b_ub=tau[others] if others.size else None,
                  bounds=[(0.0, ub) for ub in u], method="highs")
    if res.status != 0:
        return np.nan, -max(int(res.nit), 1), np.zeros(S.shape[1])
    return -res.fun, max(int(res.nit), 1), res.x


def support_lp(S, tau, u, r, tol=1e-12, max_iter=10000):
    """Maximum of row r's left side subject to every other row and the box.

    Compiled vertex walk under numba; scipy's HiGHS otherwise (the
    interpreted walk is far slower than a library LP).
    """
    S = np.ascontiguousarray(S, dtype=np.float64)
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if USE_NUMBA:
        return support_lp_jit(S, tau, u, int(r), float(tol), int(max_iter))
    return _support_lp_highs(S, tau, u, int(r))


def _row_vertices_loop(S, tau, u, r, out):
    """Edge crossings of row r written to ``out``; returns (count, min norm).

    Corners of each edge family are walked in Gray-code order so the partial
    sum and the squared norm change by one term per step.
    """
    N = S.shape[1]
    nc = 1 << (N - 1)
    first_nz = N
    for k in range(N):
        if S[r, k] != 0.0:
            first_nz = k
            break
    cnt = 0
    best = np.inf
    x = np.zeros(N)
    for n in range(N):
        sn = S[r, n]
        if sn == 0.0:
            continue
        un = u[n]
        for k in range(N):
            x[k] = 0.0
        rest = 0.0
        sq = 0.0
        for i in range(nc):
            if i > 0:
                # flip the bit that changes between gray(i-1) and gray(i)
                bit = 0
                v = i
                while (v & 1) == 0:
                    v >>= 1
                    bit += 1
                k = bit if bit < n else bit + 1
                if x[k] == 0.0:
                    x[k] = u[k]
                    rest += S[r, k] * u[k]
                    sq += u[k] * u[k]
                else:
                    x[k] = 0.0
                    rest -= S[r, k] * u[k]
                    sq -= u[k] * u[k]
            xn = (tau[r] - rest) / sn
            if xn < -EDGE_TOL * un or xn > un * (1.0 + EDGE_TOL):
                continue
            if xn <= EDGE_TOL * un or xn >= un * (1.0 - EDGE_TOL):
                if first_nz < n:
                    continue
                xn = 0.0 if xn <= EDGE_TOL * un else un
            for k in range(N):
                out[cnt, k] = x[k]
            out[cnt, n] = xn
            nrm = sq + xn * xn
            if nrm < best:
                best = nrm
            cnt += 1
    return cnt, best


def _make_cull_fused(row_vertices):
    def cull_fused(S, tau, u):
        m, N = S.shape
        maxv = (1 << (N - 1)) * N
        buf = np.empty((maxv, N))
        counts = np.zeros(m, dtype=np.int64)
        keys = np.full(m, np.inf)
        for r in range(m):
            c, best = row_vertices(S, tau, u, r, buf)
            counts[r] = c
            if c:
                keys[r] = np.sqrt(max(best, 0.0))
        order = np.argsort(keys, kind="mergesort")
        keep = np.zeros(m, dtype=np.bool_)
        xi = np.empty(m, dtype=np.int64)
        nxi = 0
        for jj in range(m):
            j = order[jj]
            if counts[j] == 0:
                continue
            c, _ = row_vertices(S, tau, u, j, buf)
            occluded = False
            for a in range(nxi):
                i = xi[a]
                thr = tau[i] + OCC_MARGIN * max(1.0, abs(tau[i]))
                above = True
                for v in range(c):
                    val = 0.0
                    for k in range(N):
                        val += S[i, k] * buf[v, k]
                    if not val > thr:
                        above = False
                        break
                if above:
                    occluded = True
                    break
            if not occluded:
                keep[j] = True
                xi[nxi] = j
                nxi += 1
        return keep, counts, keys
    return cull_fused


def _cull_fused_numpy(S, tau, u, block=256):
    m, N = S.shape
    counts = np.zeros(m, dtype=np.int64)
    keys = np.full(m, np.inf)
    verts = [None] * m
    for a in range(0, m, block):
        V, c, k = _edge_vertices_numpy(S[a:a + block], tau[a:a + block], u)
        counts[a:a + block] = c
        keys[a:a + block] = k
        for r in range(c.size):
            verts[a + r] = V[r, :c[r]].copy()
    order = np.argsort(keys, kind="stable")
    keep = np.zeros(m, dtype=bool)
    thr = tau + OCC_MARGIN * np.maximum(1.0, np.abs(tau))
    xi: list[int] = []
    for j in order:
        if counts[j] == 0:
            continue
        if xi:
            vals = S[xi] @ verts[j].T
            if np.any(np.all(vals > thr[xi, None], axis=1)):
                continue
        keep[j] = True
        xi.append(int(j))
    return keep, counts, keys


row_vertices_jit = maybe_njit(_row_vertices_loop)
cull_fused_jit = maybe_njit(_make_cull_fused(row_vertices_jit)) if row_vertices_jit else None
_cull_fused_py = _make_cull_fused(_row_vertices_loop)


def cull_fused(S, tau, u):
    """Keys, vertex counts and the non-occluded mask without materialising
    every row's vertex set at once. Returns ``(keep, counts, keys)``."""
    S = np.ascontiguousarray(S, dtype=np.float64)
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if USE_NUMBA:
        return cull_fused_jit(S, tau, u)
    return _cull_fused_numpy(S, tau, u)
