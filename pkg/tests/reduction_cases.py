"""Random constraint sets and the region / optimum comparisons used by the
reduction tests and the acceptance suite."""
import numpy as np

from mixlimit.objective import build_objective
from mixlimit.qp import QpProblem, Status, solve
from mixlimit.reduction import ConstraintSet, cull_occluded, presolve


def random_instance(rng, n, m):
    """Mixture rows from a random multichannel signal, |S x| <= 1, box [0, u]."""
    t = np.arange(m)[:, None]
    freq = rng.uniform(0.002, 0.05, n)
    S = rng.uniform(0.3, 1.2, n) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi, n))
    S += 0.2 * rng.normal(size=S.shape)
    u = rng.uniform(0.5, 1.0, n)
    cs = ConstraintSet.from_mixture(S, 1.0)
    w = rng.uniform(0.1, 1.0, n)
    w *= rng.uniform(0.5, 1.0) / w.sum()
    return cs, u, w


def reduce(cs, u):
    return cull_occluded(presolve(cs, u), debug=True)


def region_mismatches(cs, u, red, n_points, rng):
    """Points of the box feasible for exactly one of the full and reduced sets."""
    n = u.size
    X = rng.uniform(0, 1, (n_points, n)) * u
    # include points near the boundary of the full region too
    scale = np.max(X @ cs.S.T / cs.tau, axis=1, initial=0.0)
    X = np.vstack([X, X[scale > 0] / scale[scale > 0, None] * rng.uniform(0.995, 1.005, (int((scale > 0).sum()), 1))])
    X = X[np.all(X <= u, axis=1)]
    full = np.all(X @ cs.S.T <= cs.tau, axis=1)
    act = red.active()
    reduced = np.all(X @ red.S[act].T <= red.tau[act], axis=1) & np.all(X <= red.upper, axis=1)
    return int(np.sum(full != reduced)), X.shape[0]


def qp_for(rows_S, rows_tau, u, w):
    o = build_objective(w)
    n = u.size
    m = rows_tau.size
    return QpProblem(o.Q, o.c, o.d, A_ineq=rows_S.reshape(m, n), lo_ineq=np.full(m, -np.inf),
                     hi_ineq=rows_tau, lower=np.zeros(n), upper=u)


def optimum_gap(cs, u, w, red):
    full = solve(qp_for(cs.S, cs.tau, u, w))
    act = red.active()
    small = solve(qp_for(red.S[act], red.tau[act], red.upper, w))
    assert full.status is Status.OPTIMAL and small.status is Status.OPTIMAL
    return abs(full.objective_value - small.objective_value), full, small
