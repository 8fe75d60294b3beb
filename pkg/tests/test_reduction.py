import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from mixlimit.objective import build_objective
from mixlimit.qp import QpProblem, Status, solve
from mixlimit.reduction import (ACTIVE, DROPPED_OCCLUDED, DROPPED_PRESOLVE, ConstraintSet,
                                PremixKind, build_premixer, constraint_vertices, cull_occluded,
                                implied_bounds, lp_supports, merge_duplicates, occludes, presolve,
                                reduce_problem, tighten_bounds)
from reduction_cases import optimum_gap, random_instance, reduce, region_mismatches


def rows(S, tau):
    S = np.atleast_2d(np.asarray(S, float))
    return ConstraintSet(S, np.full(S.shape[0], float(tau)), np.zeros((S.shape[0], 3)))


# pre-mixers

def test_multiband_matrix():
    pm = build_premixer("multiband", 2, 2)
    np.testing.assert_array_equal(pm.P, [[1, 0], [1, 0], [0, 1], [0, 1]])
    assert pm.is_lossless() and not pm.coupled


def test_multicontent_matrix():
    pm = build_premixer(PremixKind.MULTI_CONTENT, 2, 3)
    np.testing.assert_array_equal(pm.P, np.tile(np.eye(2), (3, 1)))


def test_concatenation_matrix():
    pm = build_premixer("concatenation", 2, 2, alpha=0.5)
    ref = np.array([[0.5, 0, 0.5, 0], [0, 0.5, 0.5, 0], [0.5, 0, 0, 0.5], [0, 0.5, 0, 0.5]])
    np.testing.assert_array_equal(pm.P, ref)
    np.testing.assert_array_equal(pm.y_upper, [2, 2, 2, 2])
    assert pm.coupled and pm.is_lossless()


def test_single_and_full():
    s = build_premixer("single", 3, 2)
    assert s.P.shape == (6, 1)
    lo, hi = s.y_bounds(np.zeros(6), np.ones(6))
    assert lo[0] == 0 and hi[0] == 1
    np.testing.assert_array_equal(build_premixer("full", 3, 2).P, np.eye(6))


@pytest.mark.parametrize("kind", list(PremixKind))
@pytest.mark.parametrize("nb, nc", [(1, 1), (2, 3), (4, 1), (3, 3)])
def test_premixers_lossless_and_shaped(kind, nb, nc):
    pm = build_premixer(kind, nb, nc, alpha=0.3)
    assert pm.P.shape[0] == nb * nc and np.all(pm.P >= 0)
    assert pm.is_lossless()
    if not pm.coupled:
        assert np.all((pm.P > 0).sum(axis=1) == 1)


def test_band_fastest_stacking():
    # x[j + k*NB]: band j of content k; multiband ties the bands of one content
    pm = build_premixer("multiband", 3, 2)
    y = np.array([0.2, 0.7])
    np.testing.assert_array_equal(pm.expand(y), [0.2, 0.2, 0.2, 0.7, 0.7, 0.7])


def test_bad_alpha():
    for a in (None, 0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            build_premixer("concatenation", 2, 2, alpha=a)


def _random_qp(rng, nb, nc):
    n = nb * nc
    w = rng.uniform(0.1, 1.0, n)
    w /= w.sum()
    o = build_objective(w)
    S = rng.normal(size=(30, n))
    return QpProblem(o.Q, o.c, o.d, A_ineq=S, lo_ineq=np.full(30, -1.0), hi_ineq=np.ones(30),
                     lower=np.zeros(n), upper=np.ones(n))


@pytest.mark.parametrize("kind", ["single", "multiband", "multicontent", "concatenation"])
def test_restriction_never_improves(kind):
    rng = np.random.default_rng(5)
    for _ in range(50):
        p = _random_qp(rng, 2, 2)
        pm = build_premixer(kind, 2, 2, alpha=0.5)
        r = reduce_problem(p, pm)
        assert np.linalg.eigvalsh(r.Q).min() >= -1e-10
        full, small = solve(p), solve(r)
        assert full.status is Status.OPTIMAL and small.status is Status.OPTIMAL
        assert small.objective_value >= full.objective_value - 1e-9
        x = pm.expand(small.x)
        assert p.primal_residual(x) <= 1e-8


def test_single_channel_is_classic_limiter_gain():
    rng = np.random.default_rng(2)
    p = _random_qp(rng, 2, 2)
    sol = solve(reduce_problem(p, build_premixer("single", 2, 2)))
    # one gain: the largest value keeping every per-sample mixture within 1
    peak = np.abs(p.A_ineq.sum(axis=1)).max()
    assert sol.x[0] == pytest.approx(min(1.0, 1.0 / peak), abs=1e-9)


# presolve

def test_presolve_examples():
    cs = rows([[0.1, 0.1], [2, 2], [0, 0]], 1.0)
    cs.tau[2] = 0.0
    out = presolve(cs, np.ones(2))
    np.testing.assert_array_equal(out.status, [DROPPED_PRESOLVE, ACTIVE, DROPPED_PRESOLVE])


def test_tightening_shrinks_box():
    cs = rows([[4.0, -1.0], [0.5, 0.5]], 1.0)
    out = tighten_bounds(implied_bounds(cs, np.ones(2)), np.ones(2))
    # row 0 with x2 at most 1 forces x1 <= (1 + 1) / 4
    assert out.upper[0] == pytest.approx(0.5)
    assert out.upper[1] == 1.0


def test_presolve_never_drops_supports():
    rng = np.random.default_rng(9)
    for _ in range(30):
        cs, u, _ = random_instance(rng, 3, 40)
        out = presolve(cs, u)
        full = cs.copy()
        full.upper = u
        for r in lp_supports(full, u, method="highs"):
            assert out.status[r] == ACTIVE


# vertices and occlusion

def test_vertex_examples():
    v = constraint_vertices([1, 1], 1, [1, 1])
    assert {tuple(p) for p in np.round(v, 12)} == {(1, 0), (0, 1)}
    v = constraint_vertices([2, 2], 1, [1, 1])
    assert {tuple(p) for p in np.round(v, 12)} == {(0.5, 0), (0, 0.5)}


def test_hexagon():
    v = constraint_vertices([1, 1, 1], 1.5, [1, 1, 1])
    # analytic: each of the 12 cube edges crossed where the free coordinate is 0.5
    ref = set()
    for free in range(3):
        for a in (0.0, 1.0):
            for b in (0.0, 1.0):
                fixed = [a, b]
                x = fixed[:free] + [None] + fixed[free:]
                x[free] = 1.5 - a - b
                if 0 <= x[free] <= 1:
                    ref.add(tuple(x))
    assert len(ref) == 6
    assert {tuple(p) for p in np.round(v, 12)} == ref


@given(st.integers(1, 6), st.integers(0, 10**6))
def test_vertex_bound_and_residual(n, seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=n)
    u = rng.uniform(0.2, 1.0, n)
    tau = rng.uniform(0, max(np.maximum(s * u, 0).sum(), 1e-3))
    v = constraint_vertices(s, tau, u)
    assert v.shape[0] <= 2 ** (n - 1) * n
    if v.size:
        assert np.abs(v @ s - tau).max() <= 1e-10
        assert np.all(v >= -1e-15) and np.all(v <= u + 1e-15)


def test_occludes_examples():
    vj = constraint_vertices([1, 1], 1, [1, 1])
    assert occludes([2, 2], vj, 1.0)
    assert not occludes([1, 1], vj, 1.0)
    vj = constraint_vertices([0, 1], 0.5, [1, 1])
    assert not occludes([1, 0], vj, 0.5)


def test_cull_two_rows():
    out = cull_occluded(rows([[2, 2], [1, 1]], 1.0), np.ones(2))
    np.testing.assert_array_equal(out.status, [ACTIVE, DROPPED_OCCLUDED])


def test_duplicates_merged_first():
    cs = rows([[2, 1], [2, 1], [1, 3]], 1.0)
    m = merge_duplicates(cs)
    assert m.status[0] == ACTIVE and m.status[1] == DROPPED_OCCLUDED
    out = cull_occluded(presolve(cs, np.ones(2)))
    assert out.count() == 2


def test_touching_row_is_vacuous():
    # the hyperplane meets the box only at the corner (1, 1)
    out = cull_occluded(presolve(rows([[1, 1]], 2.0), np.ones(2)))
    assert out.status[0] == DROPPED_PRESOLVE


def test_random_64_rows_same_optimum():
    rng = np.random.default_rng(21)
    for _ in range(10):
        cs, u, w = random_instance(rng, 3, 32)
        red = reduce(cs, u)
        gap, *_ = optimum_gap(cs, u, w, red)
        assert gap <= 1e-6


@given(st.integers(1, 4), st.integers(4, 64), st.integers(0, 10**6))
def test_region_preserved(n, m, seed):
    rng = np.random.default_rng(seed)
    cs, u, _ = random_instance(rng, n, m)
    red = reduce(cs, u)
    bad, total = region_mismatches(cs, u, red, 2000, rng)
    assert bad == 0 and total > 0


def test_chain_and_supports_subset():
    rng = np.random.default_rng(4)
    for _ in range(20):
        cs, u, _ = random_instance(rng, 3, 64)
        pre = presolve(cs, u)
        red = cull_occluded(pre)
        sup = lp_supports(red)
        assert set(sup) <= set(red.active())
        assert len(sup) <= red.count() <= pre.count() <= cs.n_rows


def test_simplex_supports_match_highs():
    rng = np.random.default_rng(8)
    for _ in range(20):
        cs, u, _ = random_instance(rng, 4, 64)
        red = reduce(cs, u)
        np.testing.assert_array_equal(lp_supports(red), lp_supports(red, method="highs"))


def test_supports_are_facets():
    """Every reported support is tight somewhere the others are slack, and every
    non-support is redundant: check against an independent linprog per row."""
    rng = np.random.default_rng(13)
    cs, u, _ = random_instance(rng, 3, 64)
    red = reduce(cs, u)
    act = red.active()
    sup = set(lp_supports(red))
    for r in act:
        others = [a for a in act if a != r]
        res = linprog(-red.S[r], A_ub=red.S[others], b_ub=red.tau[others],
                      bounds=list(zip(np.zeros(3), red.upper)), method="highs-ipm")
        assert (-res.fun > red.tau[r] + 1e-7) == (r in sup) or abs(-res.fun - red.tau[r]) <= 1e-7


def test_culling_speed_n6():
    import time
    from mixlimit.experiments import SignalKind, SignalSpec, gen_tone_bank
    Y = gen_tone_bank(SignalSpec(SignalKind.SINE_BANK), 6)[40 * 256:40 * 256 + 1024]
    cs = ConstraintSet.from_mixture(Y, 1.0)
    cull_occluded(presolve(cs, np.ones(6)))  # compile
    t = time.perf_counter()
    cull_occluded(presolve(cs, np.ones(6)))
    assert time.perf_counter() - t < 1.0
