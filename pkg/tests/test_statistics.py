import math

import numpy as np
import pytest
from scipy import stats

from lyapdisc.shift import measure_Z
from lyapdisc.statistics import (MeanCheck, binomial_deviation, chernoff_check, q_zeta_bounds,
                                 q_zeta_empirical, return_tail_stats, wald_check)


def test_mean_check():
    m = MeanCheck.of(np.array([1.0, 2.0, 3.0]), 2.0)
    assert m.z == 0 and m.passes()
    assert MeanCheck(1.0, 0.0, 2.0).z == math.inf


def test_tail_at_zero_and_kac():
    ts = return_tail_stats(0.75, 3, 5000, seed=1, a_grid=(0.0, 1.0, 2.0))
    assert ts.tail[0] == 1.0
    assert ts.kac.passes(4)
    assert all(ts.bound_holds(a) for a in ts.a_grid)
    assert ts.tail_at(1.0) == ts.tail[1]
    with pytest.raises(ValueError):
        return_tail_stats(0.75, 3, 10, seed=1)


def test_binomial_deviation_matches_scipy():
    n, p, beta = 400, 0.75, 0.1
    lo, hi = p * n - beta * n, p * n + beta * n
    want = stats.binom.cdf(math.ceil(lo) - 1, n, p) + stats.binom.sf(math.floor(hi), n, p)
    assert binomial_deviation(n, p, beta) == pytest.approx(want, rel=1e-10)
    assert binomial_deviation(n, p, beta) <= math.exp(-2)


def test_chernoff_rows():
    rows = chernoff_check(0.75, 0.1, [5, 100, 400], 20000, seed=0)
    assert rows[0].empirical > 0
    for r in rows:
        assert abs(r.empirical - r.exact) <= 4 * math.sqrt(r.exact * (1 - r.exact) / 20000) + 1e-12
    bounds = [r.bound for r in rows]
    assert bounds[1] / bounds[2] == pytest.approx(math.exp(300 * 0.01 / 2))
    assert all(r.holds for r in rows[1:])
    with pytest.raises(ValueError):
        chernoff_check(0.75, 0.3, [10], 10, seed=0)


def test_chernoff_deterministic():
    a = chernoff_check(0.6, 0.1, [50], 2000, seed=3)
    b = chernoff_check(0.6, 0.1, [50], 2000, seed=3)
    assert a == b


def test_wald_report_kac_targets():
    p, N = 0.7, 3
    w = wald_check(p, N, 20000, seed=2)
    inv = 1 / measure_Z(p, N)
    assert w.kac.target == pytest.approx(inv)
    assert w.kac.passes(4)
    assert w.T_mean_kac.passes(4)
    assert w.psi_mean.passes(4)
    assert w.psi_sq_indep.passes(4)
    assert w.chebyshev_holds


def test_q_zeta_forms():
    sigma, zeta = 2.0, 3.0
    paper, exact = q_zeta_bounds(1.0, sigma, zeta)
    q = math.exp(-zeta)
    direct = math.log(4) * sum((n + 1) * zeta * q ** n for n in range(1, 2000))
    assert exact == pytest.approx(direct, rel=1e-12)
    assert paper == pytest.approx(math.log(4) * q / (1 - q) ** 2)


def test_q_zeta_empirical_below_bound():
    p, N, sigma, zeta = 0.75, 3, 2.0, 2.0
    ts = return_tail_stats(p, N, 20000, seed=4)
    emp = q_zeta_empirical(ts.taus, p, N, sigma, zeta)
    exact = q_zeta_bounds(max(ts.eta_hat, 1.0), sigma, zeta)[1]
    assert emp.mean <= exact
