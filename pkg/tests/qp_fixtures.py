"""Small QPs (n <= 3) with a brute-force grid oracle."""
import itertools
from functools import lru_cache

import numpy as np

from mixlimit.objective import build_objective
from mixlimit.qp import QpProblem


def _mixture(w, S, tau, u):
    o = build_objective(w)
    S = np.atleast_2d(np.asarray(S, float))
    m = S.shape[0]
    return QpProblem(o.Q, o.c, o.d, A_ineq=S, lo_ineq=np.full(m, -tau), hi_ineq=np.full(m, tau),
                     lower=np.zeros(len(w)), upper=np.asarray(u, float))


def fixture_problems():
    rng = np.random.default_rng(7)
    out = {
        "1d_peak2": _mixture([1.0], [[2.0], [-1.5]], 1.0, [1.0]),
        "1d_unconstrained_box": QpProblem([[2.0]], [-1.0], lower=[0.0], upper=[1.0]),
        "1d_box_active": QpProblem([[1.0]], [-3.0], lower=[-1.0], upper=[1.0]),
        "2d_hexagon": _mixture([0.5, 0.5], [[1, 1], [1, -1], [2, 0.5]], 1.2, [1, 1]),
        "2d_singular_sum1": _mixture([0.3, 0.7], [[1.5, 0.8], [-0.4, 1.3]], 1.0, [1, 1]),
        "2d_sum_below1": _mixture([0.2, 0.3], [[1.1, 0.9], [0.3, -1.4]], 1.0, [1, 0.8]),
        "2d_duplicate_rows": _mixture([0.5, 0.5], [[1, 2], [1, 2], [2, 4]], 1.0, [1, 1]),
        "2d_strict_convex": QpProblem([[2.0, 0.5], [0.5, 1.0]], [-2.0, -1.0],
                                      A_ineq=[[1.0, 1.0]], hi_ineq=[1.0], lower=[0, 0], upper=[1, 1]),
        "2d_symmetric_line": QpProblem([[0.25, -0.25], [-0.25, 0.25]], [-0.5, -0.5], 1.0,
                                       A_ineq=[[1.0, 1.0]], hi_ineq=[1.0], lower=[0, 0], upper=[1, 1]),
        "2d_interior": QpProblem(np.eye(2), [-1.0, -1.0], lower=[0, 0], upper=[10, 10]),
        "2d_equality": QpProblem([[1.0, 0.0], [0.0, 3.0]], [-1.0, -1.0], A_eq=[[1.0, 1.0]],
                                 b_eq=[1.0], lower=[0, 0], upper=[1, 1]),
        "3d_uniform": _mixture([1 / 3] * 3, [[1, 1, 1], [1, -0.5, 0.2], [0.3, 0.9, -1.1]], 1.0, [1, 1, 1]),
        "3d_rates": _mixture([0.5, 0.3, 0.2], rng.normal(size=(6, 3)), 1.0, [1, 0.9, 0.7]),
        "3d_rates_low": _mixture([0.2, 0.2, 0.1], rng.normal(size=(6, 3)), 0.8, [1, 1, 1]),
        "3d_zero_frame": _mixture([1 / 3] * 3, np.zeros((4, 3)), 1.0, [1, 1, 1]),
    }
    for i in range(6):
        n = 1 + i % 3
        w = rng.uniform(0.1, 1.0, n)
        w /= w.sum() / rng.uniform(0.5, 1.0)
        out[f"random_{i}_n{n}"] = _mixture(w, rng.normal(size=(rng.integers(1, 7), n)),
                                          rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.0, n))
    return out


def _feasible(p, X, tol=1e-12):
    ok = np.ones(X.shape[0], dtype=bool)
    if p.A_ineq.shape[0]:
        ax = X @ p.A_ineq.T
        ok &= np.all(ax <= p.hi_ineq + tol, axis=1) & np.all(ax >= p.lo_ineq - tol, axis=1)
    ok &= np.all(X >= p.lower - tol, axis=1) & np.all(X <= p.upper + tol, axis=1)
    return ok


def _hyperplanes(p):
    """Every constraint boundary as (a, b) with a.x = b."""
    n = p.n
    H = []
    for a, lo, hi in zip(p.A_ineq, p.lo_ineq, p.hi_ineq):
        for b in (lo, hi):
            if np.isfinite(b):
                H.append((a, b))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        H += [(e, p.lower[k]), (e, p.upper[k])]
    return H


def _evaluate(p, X, tol):
    X = X[_feasible(p, X, tol)]
    if not X.shape[0]:
        return None, np.inf
    f = 0.5 * np.einsum("ij,jk,ik->i", X, p.Q, X) + X @ p.c + p.d
    i = int(np.argmin(f))
    return X[i].copy(), float(f[i])


def _face_minimum(p, E, b, step, tol):
    """Lattice minimum on the affine set {E x = b} intersected with the feasible set."""
    n = p.n
    if E.shape[0]:
        x0, *_ = np.linalg.lstsq(E, b, rcond=None)
        if np.abs(E @ x0 - b).max() > 1e-9:
            return None, np.inf
        _, s, Vt = np.linalg.svd(E)
        rank = int(np.sum(s > 1e-10 * s.max()))
        Z = Vt[rank:].T
    else:
        x0, Z = np.zeros(n), np.eye(n)
    k = Z.shape[1]
    if k == 0:
        return _evaluate(p, x0[None], tol)
    # parameter range covering the box: |t| <= distance from x0 to the farthest corner
    corners = np.array(list(itertools.product(*zip(p.lower, p.upper))))
    t_lo = ((corners - x0) @ Z).min(axis=0)
    t_hi = ((corners - x0) @ Z).max(axis=0)
    if k == 3:
        # full 3-D lattice is 1e9 points; the fixtures are convex, so locate the
        # best coarse cell first and enumerate the fine lattice around it
        xc, fc = _lattice_scan(p, x0, Z, t_lo, t_hi, 10 * step, tol)
        if xc is None:
            return None, np.inf
        tc = (xc - x0) @ Z
        t_lo, t_hi = np.maximum(t_lo, tc - 20 * step), np.minimum(t_hi, tc + 20 * step)
    return _lattice_scan(p, x0, Z, t_lo, t_hi, step, tol)


def _lattice_scan(p, x0, Z, t_lo, t_hi, step, tol):
    axes = [np.arange(lo_, hi_ + step, step) for lo_, hi_ in zip(t_lo, t_hi)]
    best_x, best_f = None, np.inf
    rest = axes[1:]
    R = (np.stack(np.meshgrid(*rest, indexing="ij"), -1).reshape(-1, len(rest))
         if rest else np.zeros((1, 0)))
    for v in axes[0]:
        T = np.hstack([np.full((R.shape[0], 1), v), R])
        x, f = _evaluate(p, x0 + T @ Z.T, tol)
        if f < best_f:
            best_x, best_f = x, f
    return best_x, best_f


def grid_minimum(p, step=1e-3, tol=1e-9):
    """Brute-force minimum: a step-``step`` lattice on every face of the feasible
    polytope (the full-dimensional interior, each constraint boundary, each
    intersection of boundaries, down to vertices).

    A lattice on the box alone misses optima on oblique constraints by O(step);
    on the face that holds the optimum the restricted objective is stationary,
    so the lattice error there is O(step^2). Nothing here uses the solver.
    """
    n = p.n
    H = _hyperplanes(p)
    base_E = p.A_eq.reshape(-1, n)
    base_b = p.b_eq.reshape(-1)
    best_x, best_f = None, np.inf
    for k in range(0, n - base_E.shape[0] + 1):
        for sub in itertools.combinations(range(len(H)), k):
            E = np.vstack([base_E] + [H[i][0][None] for i in sub])
            b = np.concatenate([base_b, [H[i][1] for i in sub]])
            if E.shape[0] and np.linalg.matrix_rank(E) < E.shape[0]:
                continue
            x, f = _face_minimum(p, E, b, step, tol)
            if f < best_f:
                best_x, best_f = x, f
    return best_x, best_f


@lru_cache(maxsize=None)
def oracle(name):
    """Cached grid minimum for a named fixture."""
    return grid_minimum(fixture_problems()[name])
