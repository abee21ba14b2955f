import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lyapdisc.cocycle import (ProjVec, WindowCocycle, a_sigma, cocycle_product, constant_cocycle,
                              det, diag, f_sigma, fiber_bunching_product, holder_distance_sampled,
                              holder_norm_exact, holder_parts, identity_cocycle, is_fiber_bunched,
                              lyapunov_induced, lyapunov_mc, shear_r1, shear_r2, sin_angle,
                              spectral_norm)
from lyapdisc.shift import OrbitBuffer


def naive_product(A, bits):
    m = np.eye(2)
    for b in bits:
        m = A.table[b] @ m
    return m


def test_a_sigma_values():
    A = a_sigma(2.0)
    assert np.array_equal(A.table[0], np.diag([0.5, 2.0]))
    assert np.array_equal(A.table[1], np.diag([2.0, 0.5]))
    with pytest.raises(ValueError):
        a_sigma(1.0)


def test_identity_product_and_zero_length():
    x = OrbitBuffer(0.5, 0)
    assert np.allclose(cocycle_product(identity_cocycle(), x, 0, 500).value(), np.eye(2))
    m = cocycle_product(a_sigma(2.0), x, 0, 0)
    assert np.array_equal(m.value(), np.eye(2)) and m.logscale == 0.0
    with pytest.raises(ValueError):
        cocycle_product(a_sigma(2.0), x, 0, -1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 60))
def test_product_matches_naive(seed, n):
    A = constant_cocycle(shear_r1(0.3) @ diag(1.7))
    B = WindowCocycle(np.stack([shear_r2(0.4), diag(1.3) @ shear_r1(-0.2)]))
    x = OrbitBuffer(0.5, seed)
    for C in (A, B, a_sigma(1.5)):
        got = cocycle_product(C, x, 3, n).value()
        want = naive_product(C, x.window(3, 3 + n))
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12 * np.abs(want).max())


def test_log_norm_closed_form_for_A():
    x = OrbitBuffer(0.75, 9)
    n = 10**5
    S = int(x.window(0, n).sum())
    ln = cocycle_product(a_sigma(2.0), x, 0, n).log_norm()
    assert ln == pytest.approx(abs(2 * S - n) * math.log(2.0), rel=1e-12)


def test_long_product_no_overflow_and_det_one():
    x = OrbitBuffer(0.5, 1)
    m = cocycle_product(constant_cocycle(shear_r1(1.0) @ diag(3.0)), x, 0, 5000)
    assert math.isfinite(m.logscale)
    assert m.log_norm() == pytest.approx(5000 * math.log(3.0), abs=0.1)
    # the contracting row underflows on long products, so det is checked on a short one
    assert cocycle_product(constant_cocycle(shear_r1(1.0) @ diag(3.0)), x, 0, 20).det_defect() < 1e-10


def test_basic_helpers():
    assert spectral_norm(diag(3.0)) == pytest.approx(3.0)
    assert det(shear_r1(5.0) @ shear_r2(-2.0)) == pytest.approx(1.0)
    assert sin_angle((1, 0), (0, 2)) == 1.0 and sin_angle((1, 1), (-2, -2)) == 0.0
    v = ProjVec.from_scaled(-3.0, -4.0, 1.0)
    assert v.direction == (0.6, 0.8) and v.logmag == pytest.approx(1 + math.log(5))


def test_lyapunov_mc_small():
    est = lyapunov_mc(a_sigma(2.0), 0.75, 20000, 16, seed=2)
    assert abs(est.zscore(0.5 * math.log(2))) < 4
    est = lyapunov_mc(f_sigma(2.0), 0.75, 20000, 16, seed=2)
    assert abs(est.zscore(0.75 * math.log(2))) < 4


def test_lyapunov_mc_independent_of_workers():
    a = lyapunov_mc(a_sigma(2.0), 0.6, 5000, 8, seed=4, workers=1)
    b = lyapunov_mc(a_sigma(2.0), 0.6, 5000, 8, seed=4, workers=4)
    assert a.values == b.values


def test_lyapunov_mc_rejects_short_orbits():
    with pytest.raises(ValueError):
        lyapunov_mc(a_sigma(2.0), 0.6, 10, 8, seed=0)


def test_degenerate_p_rejected():
    with pytest.raises(ValueError):
        lyapunov_mc(a_sigma(2.0), 1.0, 4096, 4, seed=0)


@pytest.mark.parametrize("sigma", [1.5, 2.0, 3.0])
def test_fiber_bunching_product(sigma):
    for n in (1, 2, 5, 10):
        assert fiber_bunching_product(a_sigma(sigma), n) == pytest.approx(sigma ** (2 * n), rel=1e-9)


def test_bunching_verdict_flip():
    alpha = 1.0
    edge = 2 ** (alpha / 2)
    assert is_fiber_bunched(a_sigma(edge * 0.99), alpha)
    assert not is_fiber_bunched(a_sigma(edge * 1.01), alpha)


def brute_holder(C, alpha, radius=4):
    """Enumerate pairs of words on [-radius, radius] directly."""
    m1, m2 = C.window
    width = 2 * radius + 1
    sup = semi = 0.0
    words = range(2 ** width)
    val = {}
    for w in words:
        bits = [(w >> j) & 1 for j in range(width)]
        sub = bits[radius - m1: radius + m2 + 1]
        val[w] = C.table[sum(b << j for j, b in enumerate(sub))]
        sup = max(sup, spectral_norm(val[w]))
    for w in words:
        for v in words:
            if v <= w:
                continue
            d = w ^ v
            k = min(abs(j - radius) for j in range(width) if d >> j & 1)
            semi = max(semi, spectral_norm(val[w] - val[v]) * 2.0 ** (alpha * k))
    return sup + semi


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0])
def test_holder_norm_of_A(alpha):
    s = 2.0
    assert holder_norm_exact(a_sigma(s), alpha) == pytest.approx(2 * s - 1 / s, rel=1e-12)


def test_holder_parts_against_brute_force():
    rng = np.random.default_rng(0)
    C = WindowCocycle(rng.normal(size=(8, 2, 2)), 1, 1)
    for alpha in (0.3, 1.0):
        assert holder_norm_exact(C, alpha) == pytest.approx(brute_holder(C, alpha, 3), rel=1e-12)


def test_holder_difference_and_lift():
    A = a_sigma(2.0)
    assert holder_norm_exact(A, 0.5, A) == 0.0
    lifted = WindowCocycle(A.lift(2, 1), 2, 1)
    assert holder_norm_exact(lifted, 0.5) == pytest.approx(holder_norm_exact(A, 0.5))
    with pytest.raises(ValueError):
        holder_parts(A.table, 0, 0, 0.0)


def test_sampled_holder_is_lower_bound():
    rng = np.random.default_rng(1)
    C = WindowCocycle(rng.normal(size=(8, 2, 2)), 1, 1)
    s = holder_distance_sampled(C, identity_cocycle(), 0.5, 400, 3, seed=0)
    exact = holder_norm_exact(C, 0.5, identity_cocycle())
    assert s.lower_bound <= exact * (1 + 1e-12)
    assert s.lower_bound > 0.5 * exact


def test_lyapunov_induced_agrees_with_A():
    p, N = 0.75, 3
    est = lyapunov_induced(a_sigma(2.0), p, N, 4000, seed=3)
    lam = (2 * p - 1) * math.log(2.0)
    assert abs(est.first_return - lam) <= 4 * est.first_return_stderr + 1e-3
    assert est.discarded == 0


def test_shear_examples():
    assert np.array_equal(shear_r1(0), np.eye(2))
    assert np.array_equal(shear_r1(3.7) @ [1.0, 0.0], [1.0, 0.0])
    assert np.allclose(shear_r2(0.25) @ [1.0, -0.25], [1.0, 0.0])
    assert det(shear_r2(-1e8)) == 1.0


def test_word_110_product():
    x = OrbitBuffer(0.5, 0, fixed={0: 1, 1: 1, 2: 0})
    assert np.allclose(cocycle_product(a_sigma(3.0), x, 0, 3).value(), diag(3.0))


def test_f_sigma_values():
    F = f_sigma(2.0)
    assert np.array_equal(F.table[0], np.eye(2))
    assert np.array_equal(F.table[1], np.diag([2.0, 0.5]))


def test_identity_exponent_exactly_zero():
    assert lyapunov_mc(identity_cocycle(), 0.3, 2000, 4, seed=1).mean == 0.0
    assert fiber_bunching_product(identity_cocycle(), 3) == 1.0


def test_constant_holder_norm():
    m = shear_r1(2.0)
    assert holder_norm_exact(constant_cocycle(m), 0.7) == pytest.approx(spectral_norm(m))


@pytest.mark.parametrize("s, t", [(2.0, 1.5), (3.0, 1.2)])
def test_difference_of_two_A(s, t):
    # sup over the two values plus the k=0 jump between them
    want = max(s - t, 1 / t - 1 / s) + (s - t) + (1 / t - 1 / s)
    got = holder_norm_exact(a_sigma(s), 0.5, a_sigma(t))
    assert got == pytest.approx(want)
    D = WindowCocycle(a_sigma(s).table - a_sigma(t).table)
    assert got == pytest.approx(brute_holder(D, 0.5, 2))


def test_sampled_holder_monotone_in_samples():
    rng = np.random.default_rng(5)
    C = WindowCocycle(rng.normal(size=(8, 2, 2)), 1, 1)
    a = holder_distance_sampled(C, identity_cocycle(), 0.5, 50, 3, seed=0)
    b = holder_distance_sampled(C, identity_cocycle(), 0.5, 200, 3, seed=0)
    assert b.lower_bound >= a.lower_bound


def test_second_return_bound_dominates():
    p, N = 0.75, 3
    est = lyapunov_induced(a_sigma(2.0), p, N, 4000, seed=6)
    mc = lyapunov_mc(a_sigma(2.0), p, 20000, 16, seed=6)
    se = math.hypot(est.second_return_stderr, mc.stderr)
    assert est.second_return_bound >= mc.mean - 3 * se
    assert lyapunov_induced(identity_cocycle(), p, N, 500, seed=0).first_return == 0.0
