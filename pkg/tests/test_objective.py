import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixlimit.objective import (AttenuationRates, build_objective, critical_point,
                                curvature_matrix, distortion_db, distortion_g, secular_eigs)


def test_g_examples():
    assert distortion_g([1.0, 1.0], [0.5, 0.5]) == 1.0
    assert distortion_g([0.25, 1.0], [0.5, 0.5]) == pytest.approx(0.5, abs=1e-15)
    x, w = [0.9, 0.8, 0.7], [0.2, 0.3, 0.5]
    ref = math.exp(math.fsum(wi * math.log(xi) for wi, xi in zip(w, x)))
    assert distortion_g(x, w) == pytest.approx(ref, rel=1e-14)


def test_g_zero_gain():
    assert distortion_g([0.0, 0.5], [0.5, 0.5]) == 0.0
    assert distortion_db([0.0, 0.5], [0.5, 0.5]) == -np.inf


@given(st.lists(st.floats(1e-3, 1.0), min_size=1, max_size=8), st.integers(0, 10**6))
def test_db_is_weighted_sum(x, seed):
    w = np.random.default_rng(seed).uniform(0.05, 1.0, len(x))
    assert 20 * math.log10(distortion_g(x, w)) == pytest.approx(distortion_db(x, w), abs=1e-9)


def test_objective_two_channels_exact():
    o = build_objective([0.5, 0.5])
    np.testing.assert_array_equal(o.Q, [[0.25, -0.25], [-0.25, 0.25]])
    np.testing.assert_array_equal(o.c, [-0.5, -0.5])
    assert o.d == 1.0
    assert o(np.ones(2)) == 0.0


def test_objective_symbolic_expansion():
    # exact rational expansion of 1 - (second-order Taylor of g at 1)
    w = [Fraction(1, 5), Fraction(3, 10), Fraction(2, 5)]
    o = build_objective([float(v) for v in w])
    s = sum(w)
    for i in range(3):
        assert o.c[i] == pytest.approx(float((s - 2) * w[i]), abs=1e-15)
        for j in range(3):
            q = (w[i] if i == j else 0) - w[i] * w[j]
            assert o.Q[i, j] == pytest.approx(float(q), abs=1e-15)
    d = sum((w[i] if i == j else 0) - w[i] * w[j] for i in range(3) for j in range(3)) / 2 + s
    assert o.d == pytest.approx(float(d), abs=1e-15)


def test_single_channel_is_gain_maximization():
    o = build_objective([1.0])
    assert o.Q[0, 0] == 0.0 and o.c[0] == -1.0 and o.d == 1.0


def test_normalization_recorded():
    o = build_objective([0.6, 0.6])
    assert o.rates.w.sum() == pytest.approx(1.0)
    assert o.rates.scale == pytest.approx(1 / 1.2)
    keep = build_objective([0.2, 0.3])
    np.testing.assert_array_equal(keep.rates.w, [0.2, 0.3])
    assert keep.rates.scale == 1.0


def test_nonpositive_rates_rejected():
    for bad in ([0.0, 0.5], [-0.1, 0.5], [np.nan]):
        with pytest.raises(ValueError):
            AttenuationRates(bad)


def test_uniform_default():
    np.testing.assert_allclose(AttenuationRates.uniform(4).w, 0.25)


def test_taylor_order_of_accuracy():
    """1 - f agrees with g to second order: the error shrinks like h^3."""
    w = np.array([0.2, 0.3, 0.4])
    o = build_objective(w)
    d = np.array([0.7, -0.4, 0.5])
    errs = []
    for h in (0.08, 0.04, 0.02, 0.01):
        x = 1 + h * d
        errs.append(abs((1 - o(x)) - distortion_g(x, w)))
    ratios = [a / b for a, b in zip(errs[:-1], errs[1:])]
    assert all(7.0 < r < 9.0 for r in ratios)


def test_critical_point_example():
    x = critical_point([0.25, 0.25])
    np.testing.assert_array_equal(x, [3.0, 3.0])
    o = build_objective([0.25, 0.25])
    assert np.abs(o.gradient(x)).max() <= 1e-12


def test_critical_point_near_unity():
    w = np.full(3, 0.999 / 3)
    x = critical_point(w)
    assert x[0] == pytest.approx(1001.0, rel=1e-9)
    assert np.all(x > 100)


def test_critical_point_singular():
    assert critical_point([0.5, 0.5]) is None


def test_secular_examples():
    np.testing.assert_allclose(secular_eigs([0.5, 0.5]), [0.0, 0.5], atol=1e-12)
    w = np.array([0.5, 0.7])
    ev = secular_eigs(w)
    assert ev[0] < 0 and w[0] < ev[1] < w[1]


@pytest.mark.parametrize("n", range(1, 9))
def test_secular_vs_dense(n):
    rng = np.random.default_rng(n)
    for _ in range(50):
        w = rng.uniform(0.01, 1.0, n)
        w *= rng.uniform(0.2, 1.5) / w.sum()
        dense = np.linalg.eigvalsh(curvature_matrix(w))
        np.testing.assert_allclose(secular_eigs(w), dense, atol=1e-8)


def test_secular_repeated_rates():
    w = np.array([0.1, 0.1, 0.1, 0.3, 0.3])
    np.testing.assert_allclose(secular_eigs(w), np.linalg.eigvalsh(curvature_matrix(w)), atol=1e-8)


def test_psd_iff_sum_at_most_one():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n = rng.integers(2, 9)
        w = rng.uniform(0.01, 1.0, n)
        w *= rng.choice([rng.uniform(0.1, 0.99), rng.uniform(1.01, 2.0), 1.0]) / w.sum()
        lam = np.linalg.eigvalsh(curvature_matrix(w)).min()
        assert (lam >= -1e-10) == (w.sum() <= 1 + 1e-12)


@pytest.mark.parametrize("w, budget", [((0.5, 0.5), 1.0), ((0.4, 0.6), 1.9)])
def test_argmax_consistency_near_unity(w, budget):
    """Minimizer of f and maximizer of g agree under x1 + x2 <= budget (1e-3 grid)."""
    w = np.array(w)
    o = build_objective(w)
    g = np.arange(1, 1001) * 1e-3
    A, B = np.meshgrid(g, g, indexing="ij")
    ok = A + B <= budget + 1e-12
    X = np.stack([A[ok], B[ok]], 1)
    f = 0.5 * np.einsum("ij,jk,ik->i", X, o.Q, X) + X @ o.c + o.d
    gv = np.exp(np.log(X) @ w)
    assert np.abs(X[np.argmin(f)] - X[np.argmax(gv)]).max() <= 1.5e-3
