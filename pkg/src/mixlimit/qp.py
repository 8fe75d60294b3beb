"""Dense convex QP solver (primal active set, null-space steps).

Solves::

    min  1/2 x'Qx + c'x + d
    s.t. lo <= A x <= hi,   E x = b,   lower <= x <= upper

Equalities are eliminated once up front; the active-set iteration then runs in
the reduced coordinates. Zero-curvature directions of the reduced Hessian are
followed as linear descent rays until a constraint blocks, so rank-deficient
``Q`` (the distortion objective with rates summing to one) needs no ridge.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

__all__ = [
    "Status",
    "QpProblem",
    "QpSolution",
    "Multipliers",
    "SolverConfig",
    "solve",
    "kkt_residual",
]


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERATIONS = "MaxIterations"
    INFEASIBLE = "Infeasible"


def _as2d(a, n):
    if a is None:
        return np.zeros((0, n))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, n))
    return a


@dataclass(frozen=True)
class QpProblem:
    """Immutable dense QP. Missing pieces default to "no constraint"."""

    Q: np.ndarray
    c: np.ndarray
    d: float = 0.0
    A_ineq: np.ndarray | None = None
    lo_ineq: np.ndarray | None = None
    hi_ineq: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise ValueError(f"Q must be square, got {Q.shape}")
        scale = max(1.0, float(np.abs(Q).max(initial=0.0)))
        if np.abs(Q - Q.T).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("Q is not symmetric")
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if c.shape != (n,):
            raise ValueError("c has wrong length")
        A = _as2d(self.A_ineq, n)
        mi = A.shape[0]
        lo = np.full(mi, -np.inf) if self.lo_ineq is None else np.asarray(self.lo_ineq, float).reshape(-1)
        hi = np.full(mi, np.inf) if self.hi_ineq is None else np.asarray(self.hi_ineq, float).reshape(-1)
        E = _as2d(self.A_eq, n)
        b = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).reshape(-1)
        lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float).reshape(-1)
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float).reshape(-1)
        if A.shape[1] != n or lo.shape != (mi,) or hi.shape != (mi,):
            raise ValueError("inequality block has inconsistent dimensions")
        if E.shape[1] != n or b.shape != (E.shape[0],):
            raise ValueError("equality block has inconsistent dimensions")
        if lower.shape != (n,) or upper.shape != (n,):
            raise ValueError("box bounds have wrong length")
        if np.any(lower > upper):
            raise ValueError("lower > upper")
        if np.any(lo > hi):
            raise ValueError("lo_ineq > hi_ineq")
        for name, val in [("Q", Q), ("c", c), ("A_ineq", A), ("lo_ineq", lo), ("hi_ineq", hi),
                          ("A_eq", E), ("b_eq", b), ("lower", lower), ("upper", upper)]:
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "d", float(self.d))

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.c @ x + self.d)

    def primal_residual(self, x) -> float:
        """Largest violation over every row, equality and bound."""
        x = np.asarray(x, dtype=float)
        v = [0.0]
        if self.A_ineq.shape[0]:
            ax = self.A_ineq @ x
            v.append(float(np.max(np.maximum(self.lo_ineq - ax, ax - self.hi_ineq), initial=0.0)))
        if self.A_eq.shape[0]:
            v.append(float(np.abs(self.A_eq @ x - self.b_eq).max()))
        v.append(float(np.max(np.maximum(self.lower - x, x - self.upper), initial=0.0)))
        return max(v)


@dataclass
class Multipliers:
    """Signed multipliers: positive means the upper side is active."""

    ineq: np.ndarray
    eq: np.ndarray
    box: np.ndarray


@dataclass
class QpSolution:
    x: np.ndarray
    objective_value: float
    status: Status
    primal_residual: float
    kkt_residual: float
    active_set: list[int]
    multipliers: Multipliers | None = None
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def diagnostics(self) -> dict:
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "kkt_residual": self.kkt_residual,
            "objective": self.objective_value,
            "active_set": [int(i) for i in self.active_set],
            "x": [float(v) for v in self.x],
        }

    def to_json(self) -> str:
        return json.dumps(self.diagnostics())


@dataclass(frozen=True)
class SolverConfig:
    feas_tol: float = 1e-8
    kkt_tol: float = 1e-6
    max_iter: int | None = None
    # reduced-Hessian eigenvalues below this (relative) count as zero curvature
    curvature_tol: float = 1e-12


def kkt_residual(p: QpProblem, x, multipliers: Multipliers) -> float:
    """Max-norm of stationarity and complementary-slackness violations.

    Multipliers are signed per row (see :class:`Multipliers`); a multiplier whose
    sign points at an infinite side is counted in full as a violation.
    """
    x = np.asarray(x, dtype=float)
    lam_i = np.asarray(multipliers.ineq, dtype=float).reshape(-1)
    lam_e = np.asarray(multipliers.eq, dtype=float).reshape(-1)
    lam_b = np.asarray(multipliers.box, dtype=float).reshape(-1)
    grad = p.Q @ x + p.c + p.A_ineq.T @ lam_i + p.A_eq.T @ lam_e + lam_b
    worst = float(np.abs(grad).max(initial=0.0))

    def _compl(lam, val, lo, hi):
        hi_slack = np.where(np.isfinite(hi), hi - val, np.inf)
        lo_slack = np.where(np.isfinite(lo), val - lo, np.inf)
        slack = np.where(lam > 0, hi_slack, np.where(lam < 0, lo_slack, 0.0))
        with np.errstate(invalid="ignore"):
            v = np.where(np.isinf(slack), np.abs(lam), np.abs(lam * slack))
        return float(v.max(initial=0.0))

    if lam_i.size:
        worst = max(worst, _compl(lam_i, p.A_ineq @ x, p.lo_ineq, p.hi_ineq))
    worst = max(worst, _compl(lam_b, x, p.lower, p.upper))
    return worst


def _one_sided(p: QpProblem):
    """Stack every inequality/bound as G x <= h, with (source, index, side) tags."""
    n = p.n
    rows, rhs, tags = [], [], []
    A = p.A_ineq
    for i in range(A.shape[0]):
        if np.isfinite(p.hi_ineq[i]):
            rows.append(A[i]); rhs.append(p.hi_ineq[i]); tags.append((0, i, 1))
        if np.isfinite(p.lo_ineq[i]):
            rows.append(-A[i]); rhs.append(-p.lo_ineq[i]); tags.append((0, i, -1))
    eye = np.eye(n)
    for j in range(n):
        if np.isfinite(p.upper[j]):
            rows.append(eye[j]); rhs.append(p.upper[j]); tags.append((1, j, 1))
        if np.isfinite(p.lower[j]):
            rows.append(-eye[j]); rhs.append(-p.lower[j]); tags.append((1, j, -1))
    G = np.array(rows, dtype=float).reshape(-1, n)
    h = np.array(rhs, dtype=float)
    return G, h, tags


def _eliminate_equalities(E, b, n, tol):
    if E.shape[0] == 0:
        return np.zeros(n), None
    U, s, Vt = np.linalg.svd(E, full_matrices=True)
    rank = int(np.sum(s > tol * max(1.0, s.max(initial=0.0))))
    xp = Vt[:rank].T @ ((U[:, :rank].T @ b) / s[:rank])
    N = Vt[rank:].T
    return xp, N


def _phase1(G, h, E, b, n):
    """Point maximising the smallest slack (capped at 1), or None if infeasible."""
    m = G.shape[0]
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_ub = np.hstack([G, np.ones((m, 1))]) if m else None
    A_eq = np.hstack([E, np.zeros((E.shape[0], 1))]) if E.shape[0] else None
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(cost, A_ub=A_ub, b_ub=h if m else None, A_eq=A_eq,
                  b_eq=b if E.shape[0] else None, bounds=bounds, method="highs")
    if res.status != 0 or res.x[-1] < -1e-9:
        return None
    return res.x[:n]


def _independent_subset(A, idx, tol=1e-9):
    """Greedy (in the given order) linearly independent subset of rows idx."""
    keep: list[int] = []
    basis = np.zeros((0, A.shape[1]))
    for i in idx:
        v = A[i].copy()
        if basis.shape[0]:
            v -= basis.T @ (basis @ v)
        nv = np.linalg.norm(v)
        if nv > tol * max(1.0, np.linalg.norm(A[i])):
            keep.append(i)
            basis = np.vstack([basis, v / nv])
        if basis.shape[0] == A.shape[1]:
            break
    return keep


def solve(p: QpProblem, cfg: SolverConfig | None = None, x0=None,
          working_set=None) -> QpSolution:
    """Minimise ``p``; ``x0``/``working_set`` warm-start the iteration.

    ``working_set`` indexes the one-sided rows: every finite ``hi``/``lo`` side
    of ``A_ineq`` in row order, then the upper/lower bounds per variable.
    """
    cfg = cfg or SolverConfig()
    n = p.n
    G, h, tags = _one_sided(p)
    m = G.shape[0]
    E, b = p.A_eq, p.b_eq
    me = E.shape[0]
    max_iter = cfg.max_iter or 50 * (n + p.A_ineq.shape[0] + me)

    xp, N = _eliminate_equalities(E, b, n, 1e-12)
    if N is not None and me and np.abs(E @ xp - b).max() > cfg.feas_tol:
        return _infeasible(p, xp)

    def to_x(z):
        return xp + N @ z if N is not None else z.copy()

    def to_z(x):
        return N.T @ (x - xp) if N is not None else np.asarray(x, float).copy()

    if N is not None:
        H = N.T @ p.Q @ N
        cz = N.T @ (p.Q @ xp + p.c)
        Gz = G @ N
        hz = h - G @ xp
    else:
        H, cz, Gz, hz = p.Q, p.c, G, h
    r = H.shape[0]
    H = 0.5 * (H + H.T)
    ftol = cfg.feas_tol

    def feasible(z):
        return (not m) or np.max(Gz @ z - hz) <= 0.5 * ftol

    # starting point
    z = None
    if x0 is not None:
        cand = to_z(np.asarray(x0, float))
        if feasible(cand) and (not me or np.abs(E @ to_x(cand) - b).max() <= ftol):
            z = cand
    if z is None:
        ustar = -np.linalg.pinv(p.Q, rcond=1e-12, hermitian=True) @ p.c
        cand = to_z(np.clip(ustar, p.lower, p.upper))
        if feasible(cand) and (not me or np.abs(E @ to_x(cand) - b).max() <= ftol):
            z = cand
    if z is None:
        cand = to_z(np.clip(np.zeros(n), p.lower, p.upper))
        if feasible(cand) and (not me or np.abs(E @ to_x(cand) - b).max() <= ftol):
            z = cand
    if z is None:
        xf = _phase1(G, h, E, b, n)
        if xf is None:
            return _infeasible(p, np.clip(xp, p.lower, p.upper))
        z = to_z(xf)

    slack = hz - Gz @ z if m else np.zeros(0)
    if working_set is not None:
        seed = [i for i in working_set if 0 <= i < m and abs(slack[i]) <= ftol]
    else:
        seed = []
    seed += [i for i in np.flatnonzero(np.abs(slack) <= ftol) if i not in seed]
    W = _independent_subset(Gz, seed) if r else []

    L = _cholesky_pd(H) if r else None
    if L is not None:
        z, W, status, it = _range_space_loop(H, cz, Gz, hz, z, W, L, max_iter)
    else:
        z, W, status, it = _null_space_loop(H, cz, Gz, hz, z, W, max_iter, cfg)

    x = to_x(z)
    mult = _recover_multipliers(p, x, G, tags, W)
    kres = kkt_residual(p, x, mult)
    pres = p.primal_residual(x)
    if status is Status.OPTIMAL and (pres > ftol or kres > cfg.kkt_tol):
        status = Status.MAX_ITERATIONS
    return QpSolution(x=x, objective_value=p.objective(x), status=status,
                      primal_residual=pres, kkt_residual=kres, active_set=list(W),
                      multipliers=mult, iterations=it)


def _cholesky_pd(H):
    """Lower Cholesky factor when H is comfortably positive definite, else None."""
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None
    dmax = float(np.abs(np.diag(H)).max(initial=0.0))
    # absolute floor: a curvature of 1e-16 is flat, however small the rest of H
    if float(np.diag(L).min()) ** 2 <= 1e-10 * max(dmax, 1.0):
        return None
    return L


def _ratio_test(Gz, hz, z, p_step, W, alpha):
    m = Gz.shape[0]
    block = -1
    if m:
        out = np.ones(m, dtype=bool)
        out[W] = False
        gp = Gz @ p_step
        cand = out & (gp > 1e-14 * max(1.0, np.abs(p_step).max()))
        if np.any(cand):
            idx = np.flatnonzero(cand)
            steps = np.maximum(hz[idx] - Gz[idx] @ z, 0.0) / gp[idx]
            smin = steps.min()
            if smin <= alpha:
                alpha = smin
                ties = idx[steps <= smin + 1e-15 * max(1.0, smin)]
                block = int(ties.min())
    return alpha, block


def _range_space_loop(H, cz, Gz, hz, z, W, L, max_iter):
    """Active set with H = L L'; QR of Y = L^-1 A' is updated column-wise."""
    r = H.shape[0]
    W = list(W)

    def linv(v):
        return sla.solve_triangular(L, v, lower=True, check_finite=False)

    def refactor():
        if W:
            Y = linv(Gz[W].T)
            return sla.qr(Y, mode="full", check_finite=False)
        return np.eye(r), np.zeros((r, 0))

    Qy, Ry = refactor()
    status = Status.MAX_ITERATIONS
    it = 0
    updates = 0
    # after an unblocked full step z minimises over the working face already
    need_step = True
    while it < max_iter:
        it += 1
        k = len(W)
        g = H @ z + cz
        u = linv(g)
        qtu = Qy.T @ u
        if need_step:
            perp = Qy[:, k:] @ qtu[k:]
            p_step = -sla.solve_triangular(L, perp, lower=True, trans="T", check_finite=False)
            if np.abs(p_step).max(initial=0.0) > 1e-13 * (1.0 + np.abs(z).max(initial=0.0)):
                alpha, block = _ratio_test(Gz, hz, z, p_step, W, 1.0)
                z = z + alpha * p_step
                if block >= 0:
                    W.append(block)
                    Qy, Ry = sla.qr_insert(Qy, Ry, linv(Gz[block]), k, which="col",
                                           check_finite=False)
                    updates += 1
                    if updates >= 64:
                        Qy, Ry = refactor()
                        updates = 0
                else:
                    need_step = False
                continue
        if not W:
            status = Status.OPTIMAL
            break
        lam = -sla.solve_triangular(Ry[:k], qtu[:k], check_finite=False)
        worst = float(lam.min())
        if worst >= -1e-10 * max(1.0, float(np.abs(g).max())):
            status = Status.OPTIMAL
            break
        cand = [W[j] for j in range(k) if lam[j] <= worst + 1e-14 * abs(worst)]
        pos = W.index(min(cand))
        W.pop(pos)
        Qy, Ry = sla.qr_delete(Qy, Ry, pos, 1, which="col", check_finite=False)
        updates += 1
        need_step = True
        if updates >= 64:
            Qy, Ry = refactor()
            updates = 0
    return z, sorted(W), status, it


def _null_space_loop(H, cz, Gz, hz, z, W, max_iter, cfg):
    """Active set via an explicit null-space basis; handles singular H."""
    r = H.shape[0]
    m = Gz.shape[0]
    W = list(W)
    status = Status.MAX_ITERATIONS
    it = 0
    mu = np.zeros(0)
    # after an unblocked Newton step z minimises the working subspace; go
    # straight to the multipliers instead of trusting a tiny recomputed step
    at_subspace_min = False
    while it < max_iter:
        it += 1
        g = H @ z + cz
        if W:
            A = Gz[W]
            Qf, Rf = sla.qr(A.T, mode="full")
            Z = Qf[:, len(W):]
        else:
            A = np.zeros((0, r))
            Z = None
        if Z is None:
            gr, Hr = g, H
        else:
            gr, Hr = Z.T @ g, Z.T @ H @ Z
        p_step = np.zeros(r)
        ray = False
        if gr.size:
            lam, V = np.linalg.eigh(Hr)
            lscale = max(1.0, float(np.abs(lam).max()))
            flat = lam <= cfg.curvature_tol * lscale
            a = V.T @ gr
            gtol = 1e-13 * max(1.0, float(np.abs(g).max()))
            if np.any(flat) and np.abs(a[flat]).max() > gtol:
                d_red = -(V[:, flat] @ a[flat])
                ray = True
            else:
                d_red = -(V[:, ~flat] @ (a[~flat] / lam[~flat]))
            p_step = d_red if Z is None else Z @ d_red
        step_small = np.abs(p_step).max(initial=0.0) <= 1e-12 * (1.0 + np.abs(z).max(initial=0.0))
        if (step_small or at_subspace_min) and not ray:
            at_subspace_min = False
            if not W:
                status = Status.OPTIMAL
                break
            # A' mu = -g on the working rows
            mu = sla.solve_triangular(Rf[: len(W)], -(Qf[:, : len(W)].T @ g))
            worst = float(mu.min())
            if worst >= -1e-10 * max(1.0, float(np.abs(g).max())):
                status = Status.OPTIMAL
                break
            cand = [W[k] for k in range(len(W)) if mu[k] <= worst + 1e-14 * abs(worst)]
            W.remove(min(cand))
            continue
        alpha, block = _ratio_test(Gz, hz, z, p_step, W, np.inf if ray else 1.0)
        if not np.isfinite(alpha):
            raise ValueError("QP is unbounded below on the feasible set")
        z = z + alpha * p_step
        if block >= 0:
            W.append(block)
            W.sort()
        elif not ray:
            at_subspace_min = True

    return z, W, status, it


def _recover_multipliers(p, x, G, tags, W):
    n = p.n
    g = p.Q @ x + p.c
    me = p.A_eq.shape[0]
    cols = [G[W].T] if W else []
    if me:
        cols.append(p.A_eq.T)
    lam_i = np.zeros(p.A_ineq.shape[0])
    lam_b = np.zeros(n)
    lam_e = np.zeros(me)
    if cols:
        K = np.hstack(cols)
        sol = np.linalg.lstsq(K, -g, rcond=None)[0]
        for k, row in enumerate(W):
            src, i, side = tags[row]
            if src == 0:
                lam_i[i] += side * sol[k]
            else:
                lam_b[i] += side * sol[k]
        lam_e = sol[len(W):]
    return Multipliers(ineq=lam_i, eq=lam_e, box=lam_b)


def _infeasible(p, x):
    x = np.asarray(x, dtype=float)
    return QpSolution(x=x, objective_value=p.objective(x), status=Status.INFEASIBLE,
                      primal_residual=p.primal_residual(x), kkt_residual=np.inf,
                      active_set=[], multipliers=None, iterations=0)
