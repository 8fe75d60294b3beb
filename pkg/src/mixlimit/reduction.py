"""Variable reduction (pre-mixers) and constraint reduction (presolve and
occlusion culling) for the per-frame limiter QP.

Mixture rows are kept one-sided, ``s . x <= tau`` with ``tau >= 0``, so the
origin is always feasible and every row's cut-off region is seen from it.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .qp import QpProblem

log = logging.getLogger(__name__)

# above this many variables the 2^(N-1) N edge walk is skipped
MAX_CULL_VARIABLES = 20

ACTIVE, DROPPED_PRESOLVE, DROPPED_OCCLUDED = 0, 1, 2
STATUS_NAMES = {ACTIVE: "Active", DROPPED_PRESOLVE: "DroppedPresolve",
                DROPPED_OCCLUDED: "DroppedOccluded"}


class PremixKind(str, enum.Enum):
    SINGLE = "single"
    MULTI_BAND = "multiband"
    MULTI_CONTENT = "multicontent"
    CONCATENATION = "concatenation"
    FULL = "full"


@dataclass(frozen=True)
class PreMixer:
    kind: PremixKind
    P: np.ndarray
    y_upper: np.ndarray
    coupled: bool
    alpha: float | None = None

    @property
    def n_inputs(self) -> int:
        return self.P.shape[0]

    @property
    def n_vars(self) -> int:
        return self.P.shape[1]

    def expand(self, y) -> np.ndarray:
        return self.P @ np.asarray(y, dtype=float)

    def is_lossless(self, tol: float = 1e-12) -> bool:
        return bool(np.abs(self.P.sum(axis=1) - 1.0).max() <= tol)

    def y_bounds(self, lower, upper):
        """Box for y. Uncoupled: exact image of [lower, upper]. Coupled: y_upper."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if self.coupled:
            return np.zeros(self.n_vars), self.y_upper.copy()
        lo = np.zeros(self.n_vars)
        hi = np.full(self.n_vars, np.inf)
        for p in range(self.n_vars):
            rows = np.flatnonzero(self.P[:, p])
            scale = self.P[rows, p]
            lo[p] = np.max(lower[rows] / scale)
            hi[p] = np.min(upper[rows] / scale)
        return lo, hi


def build_premixer(kind, n_bands: int, n_contents: int, alpha: float | None = None) -> PreMixer:
    """Lossless pre-mixer over gains stacked band-fastest, ``x[j + k*n_bands]``."""
    kind = PremixKind(kind)
    if n_bands < 1 or n_contents < 1:
        raise ValueError("need at least one band and one content channel")
    nb, nc = n_bands, n_contents
    N = nb * nc
    ones_b, ones_c = np.ones((nb, 1)), np.ones((nc, 1))
    if kind is PremixKind.SINGLE:
        P = np.ones((N, 1))
    elif kind is PremixKind.MULTI_BAND:
        P = np.kron(np.eye(nc), ones_b)
    elif kind is PremixKind.MULTI_CONTENT:
        P = np.kron(ones_c, np.eye(nb))
    elif kind is PremixKind.FULL:
        P = np.eye(N)
    else:
        if alpha is None or not (0.0 < alpha < 1.0):
            raise ValueError(f"concatenation needs 0 < alpha < 1, got {alpha}")
        P = np.hstack([alpha * np.kron(ones_c, np.eye(nb)),
                       (1.0 - alpha) * np.kron(np.eye(nc), ones_b)])
        y_upper = np.concatenate([np.full(nb, 1.0 / alpha), np.full(nc, 1.0 / (1.0 - alpha))])
        return PreMixer(kind, P, y_upper, coupled=True, alpha=alpha)
    return PreMixer(kind, P, np.ones(P.shape[1]), coupled=False)


def reduce_problem(p: QpProblem, pm: PreMixer) -> QpProblem:
    """Restrict ``p`` to ``x = P y``."""
    P = pm.P
    if P.shape[0] != p.n:
        raise ValueError(f"pre-mixer expects {P.shape[0]} variables, problem has {p.n}")
    Qy = P.T @ p.Q @ P
    Qy = 0.5 * (Qy + Qy.T)
    A = p.A_ineq @ P
    lo, hi = p.lo_ineq, p.hi_ineq
    ylo, yhi = pm.y_bounds(p.lower, p.upper)
    if pm.coupled:
        A = np.vstack([A, P])
        lo = np.concatenate([lo, p.lower])
        hi = np.concatenate([hi, p.upper])
    return QpProblem(Qy, P.T @ p.c, p.d, A_ineq=A, lo_ineq=lo, hi_ineq=hi,
                     A_eq=p.A_eq @ P if p.A_eq.shape[0] else None,
                     b_eq=p.b_eq if p.A_eq.shape[0] else None, lower=ylo, upper=yhi)


@dataclass
class ConstraintSet:
    """One-sided mixture rows ``S[r] . x <= tau[r]`` with provenance.

    ``origin[r] = (sample, mixer, sign)``.
    """

    S: np.ndarray
    tau: np.ndarray
    origin: np.ndarray
    status: np.ndarray = None
    min_norm_key: np.ndarray = None
    upper: np.ndarray | None = None  # box upper after tightening
    stage_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=float).reshape(len(self.tau), -1)
        self.tau = np.asarray(self.tau, dtype=float)
        self.origin = np.asarray(self.origin, dtype=np.int64).reshape(-1, 3)
        m = self.tau.size
        if np.any(self.tau < 0):
            raise ValueError("thresholds must be non-negative")
        if self.status is None:
            self.status = np.zeros(m, dtype=np.int8)
        if self.min_norm_key is None:
            self.min_norm_key = np.full(m, np.inf)

    @classmethod
    def from_mixture(cls, S_m: np.ndarray, tau: float, mixer: int = 0, sample0: int = 0):
        """Both signs of ``|S_m x| <= tau``, + rows first."""
        S_m = np.asarray(S_m, dtype=float)
        F = S_m.shape[0]
        idx = np.arange(F) + sample0
        origin = np.concatenate([np.stack([idx, np.full(F, mixer), np.ones(F, int)], 1),
                                 np.stack([idx, np.full(F, mixer), -np.ones(F, int)], 1)])
        return cls(np.vstack([S_m, -S_m]), np.full(2 * F, float(tau)), origin)

    @property
    def n_rows(self) -> int:
        return self.tau.size

    def active(self) -> np.ndarray:
        return np.flatnonzero(self.status == ACTIVE)

    def count(self, status=ACTIVE) -> int:
        return int(np.sum(self.status == status))

    def copy(self) -> "ConstraintSet":
        return ConstraintSet(self.S.copy(), self.tau.copy(), self.origin.copy(), self.status.copy(),
                             self.min_norm_key.copy(),
                             None if self.upper is None else self.upper.copy(),
                             dict(self.stage_counts))

    def transformed(self, P: np.ndarray, upper) -> "ConstraintSet":
        """Rows mapped through a pre-mixer; statuses carried over."""
        out = self.copy()
        out.S = self.S @ P
        out.upper = np.asarray(upper, dtype=float)
        out.min_norm_key = np.full(self.n_rows, np.inf)
        return out


def _reach(S, u):
    return np.maximum(S * u, 0.0).sum(axis=1)


def implied_bounds(cs: ConstraintSet, u) -> ConstraintSet:
    """Drop rows that no point of the box [0, u] can violate."""
    out = cs.copy()
    u = np.asarray(u, dtype=float)
    act = out.active()
    drop = act[_reach(out.S[act], u) <= out.tau[act]]
    out.status[drop] = DROPPED_PRESOLVE
    out.upper = u.copy()
    out.stage_counts["implied"] = out.count()
    return out


def tighten_bounds(cs: ConstraintSet, u, passes: int = 3) -> ConstraintSet:
    """Tighten ``u`` from single-variable implications of each active row, then
    drop rows the tightened box can no longer reach."""
    out = cs.copy()
    u = np.array(u, dtype=float)
    for _ in range(passes):
        act = out.active()
        if act.size == 0:
            break
        S, tau = out.S[act], out.tau[act]
        floor = np.minimum(S * u, 0.0)
        slack = tau[:, None] - (floor.sum(axis=1)[:, None] - floor)
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = np.where(S > 0, slack / S, np.inf)
        new_u = np.minimum(u, np.maximum(bound.min(axis=0), 0.0))
        if np.all(new_u >= u):
            break
        u = new_u
    act = out.active()
    drop = act[_reach(out.S[act], u) <= out.tau[act]]
    out.status[drop] = DROPPED_PRESOLVE
    out.upper = u
    out.stage_counts["tightened"] = out.count()
    return out


def presolve(cs: ConstraintSet, u) -> ConstraintSet:
    """Implied-bounds elimination followed by bound tightening."""
    return tighten_bounds(implied_bounds(cs, u), u)


def constraint_vertices(s, tau: float, u) -> np.ndarray:
    """Points where ``s . x = tau`` crosses an edge of the box [0, u] (deduplicated)."""
    s = np.asarray(s, dtype=float).reshape(1, -1)
    u = np.asarray(u, dtype=float)
    live = u > 0
    V, counts, _ = kernels.edge_vertices(s[:, live], np.array([tau], float), u[live])
    out = np.zeros((int(counts[0]), u.size))
    out[:, live] = V[0, : counts[0]]
    return out


def occludes(s_i, j_vertices, tau: float) -> bool:
    """True iff ``s_i . x > tau`` at every vertex of row j's hyperplane section."""
    j_vertices = np.asarray(j_vertices, dtype=float)
    if j_vertices.shape[0] == 0:
        raise ValueError("row j has no vertices")
    return bool(np.all(j_vertices @ np.asarray(s_i, dtype=float) > tau))


def merge_duplicates(cs: ConstraintSet) -> ConstraintSet:
    """Exact duplicate active rows survive once (lowest index)."""
    out = cs.copy()
    act = out.active()
    if act.size < 2:
        return out
    key = np.hstack([out.S[act], out.tau[act, None]])
    _, first = np.unique(key, axis=0, return_index=True)
    dup = np.setdiff1d(np.arange(act.size), first)
    out.status[act[dup]] = DROPPED_OCCLUDED
    return out


def cull_occluded(cs: ConstraintSet, u=None, debug: bool = False) -> ConstraintSet:
    """Keep the rows no other row occludes (sorted min-norm-vertex sweep).

    Rows whose hyperplane misses the box are vacuous and marked DroppedPresolve.
    ``debug`` re-checks that no accepted row with a larger key occludes another.
    """
    u = np.asarray(cs.upper if u is None else u, dtype=float)
    out = merge_duplicates(cs)
    out.upper = u
    act = out.active()
    live = u > 0
    if act.size == 0:
        out.stage_counts["nonoccluded"] = 0
        return out
    if live.sum() > MAX_CULL_VARIABLES:
        log.warning("%d variables exceeds culling cap; presolve only", live.sum())
        out.stage_counts["nonoccluded"] = out.count()
        return out
    # a row whose hyperplane only touches the box cannot cut anything off
    vacuous = _reach(out.S[act][:, live], u[live]) <= out.tau[act]
    out.status[act[vacuous]] = DROPPED_PRESOLVE
    act = act[~vacuous]
    S = np.ascontiguousarray(out.S[act][:, live])
    tau = out.tau[act]
    keep, counts, keys = kernels.cull_fused(S, tau, u[live])
    out.min_norm_key[act] = keys
    out.status[act[counts == 0]] = DROPPED_PRESOLVE
    out.status[act[(counts > 0) & ~keep]] = DROPPED_OCCLUDED
    if debug:
        V, counts, keys = kernels.edge_vertices(S, tau, u[live])
        kept = np.flatnonzero(keep)
        for a in kept:
            for b in kept:
                if a != b and keys[a] >= keys[b] and counts[b]:
                    assert not occludes(S[a], V[b, : counts[b]], tau[a]), "sort order unsound"
    out.stage_counts["nonoccluded"] = out.count()
    return out


def lp_supports(cs: ConstraintSet, u=None, tol: float = 1e-9, method: str = "simplex") -> np.ndarray:
    """Active rows that are facets of {active rows} ∩ [0, u].

    A row is a support iff maximising its left side subject to every other
    active row and the box exceeds its threshold. A vertex of the row's
    hyperplane section that strictly satisfies all other rows (and is not a box
    corner) certifies support without an LP. ``method`` is "simplex" (small
    dense vertex walk, HiGHS if it fails) or "highs" (scipy linprog).
    """
    u = np.asarray(cs.upper if u is None else u, dtype=float)
    act = cs.active()
    live = u > 0
    S = np.ascontiguousarray(cs.S[act][:, live])
    tau = cs.tau[act]
    ul = u[live]
    m = act.size
    if m == 0:
        return act
    V, counts, _ = kernels.edge_vertices(S, tau, ul)
    is_support = np.zeros(m, dtype=bool)
    for r in range(m):
        others = np.r_[0:r, r + 1:m]
        c = counts[r]
        if c:
            verts = V[r, :c]
            # edge-interior crossings: exactly one coordinate strictly inside
            interior = np.sum((verts > 1e-9) & (verts < ul - 1e-9), axis=1) == 1
            if others.size:
                slack = tau[others, None] - S[others] @ verts.T
                ok = np.all(slack > tol, axis=0) & interior
            else:
                ok = interior
            if np.any(ok):
                is_support[r] = True
                continue
        if others.size == 0:
            is_support[r] = c > 0
            continue
        best = None
        if method == "simplex":
            val, it, _ = kernels.support_lp(S, tau, ul, r)
            if it > 0:
                best = val
            else:
                log.debug("vertex walk failed on row %d; using HiGHS", r)
        if best is None:
            res = linprog(-S[r], A_ub=S[others], b_ub=tau[others],
                          bounds=[(0.0, ub) for ub in ul], method="highs")
            best = -res.fun if res.status == 0 else -np.inf
        is_support[r] = best > tau[r] + tol * max(1.0, tau[r])
    return act[is_support]
