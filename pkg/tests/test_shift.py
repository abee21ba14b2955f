import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lyapdisc.shift import (CylinderSpec, OrbitBuffer, cylinder_measure, in_W, in_Z,
                            iter_excursions, measure_Z, metric_distance, pattern_starts,
                            sample_conditioned_Z, sample_excursions, sample_orbit,
                            w_cylinder, z_cylinder)


def pinned(bits_by_index, p=0.5, seed=0):
    return OrbitBuffer(p, seed, fixed=bits_by_index)


def test_distance_identical_window_is_flagged():
    x = OrbitBuffer(0.5, 1)
    y = OrbitBuffer(0.5, 1)
    d = metric_distance(x, y, radius=8)
    assert d.value == 2.0 ** -9 and not d.exact


def test_distance_disagree_at_origin():
    x = pinned({0: 1})
    y = pinned({0: 0})
    d = metric_distance(x, y, radius=8)
    assert d.value == 1.0 and d.exact


def test_distance_first_difference_at_three():
    x = OrbitBuffer(0.5, 2)
    y = OrbitBuffer(0.5, 2, fixed={3: 1 - x[3]})
    assert metric_distance(x, y, radius=8).value == 2.0 ** -3
    z = OrbitBuffer(0.5, 2, fixed={-3: 1 - x[-3]})
    assert metric_distance(x, z, radius=8).value == 2.0 ** -3


def test_distance_empty_range():
    with pytest.raises(ValueError):
        metric_distance(OrbitBuffer(0.5, 0), OrbitBuffer(0.5, 0), radius=-1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10), st.integers(0, 10), st.integers(0, 10**6))
def test_ultrametric_and_symmetry(i, j, seed):
    x = OrbitBuffer(0.5, seed)
    y = OrbitBuffer(0.5, seed, fixed={i: 1 - x[i]})
    z = OrbitBuffer(0.5, seed, fixed={-j: 1 - x[-j]})
    r = 12
    dxy, dyz, dxz = (metric_distance(a, b, r).value for a, b in ((x, y), (y, z), (x, z)))
    assert dxy == metric_distance(y, x, r).value
    assert dxz <= max(dxy, dyz)


@pytest.mark.parametrize("p", [0.5, 0.75])
def test_sample_orbit_frequency(p):
    n = 10**6
    x = sample_orbit(p, n, seed=11)
    f = x.window(0, n).mean()
    assert abs(f - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_sample_orbit_deterministic():
    a = sample_orbit(0.6, 5000, seed=3).window(-100, 5000)
    b = sample_orbit(0.6, 5000, seed=3).window(-100, 5000)
    assert np.array_equal(a, b)


def test_extension_never_changes_symbols():
    x = OrbitBuffer(0.7, 5, chunk=64)
    inner = x.window(-100, 100)
    x.ensure(-5000, 5000)
    assert np.array_equal(x.window(-100, 100), inner)
    y = OrbitBuffer(0.7, 5, chunk=64)
    y.ensure(-5000, 5000)
    assert np.array_equal(y.window(-100, 100), inner)


def test_bits_are_binary():
    x = sample_orbit(0.3, 10000, seed=1)
    assert set(np.unique(x.window(-500, 10000))) <= {0, 1}
    assert x.lo <= 0 < x.hi


def test_conditioned_Z():
    N, p = 4, 0.75
    heads, tails = [], []
    for s in range(10**4 // 10):
        x = sample_conditioned_Z(p, N, seed=s, length=20)
        assert in_Z(x, 0, N)
        heads.append(x[N + 1])
        tails.append(x[-1])
    n = len(heads)
    for v in (heads, tails):
        assert abs(np.mean(v) - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_cylinder_measures():
    assert cylinder_measure(z_cylinder(4), 0.75) == pytest.approx(0.75 * 0.25 ** 4, rel=1e-15)
    assert cylinder_measure(z_cylinder(4), 0.75) == pytest.approx(2.9297e-3, rel=1e-4)
    assert cylinder_measure(CylinderSpec(()), 0.3) == 1.0
    assert cylinder_measure(w_cylinder(2), 0.75) == pytest.approx(0.046875, rel=1e-15)
    with pytest.raises(ValueError):
        CylinderSpec(((0, 1), (0, 0)))


def test_cylinder_frequency_matches_measure():
    n = 10**5
    x = sample_orbit(0.6, n + 10, seed=4)
    spec = CylinderSpec(((0, 1), (1, 0), (3, 1)))
    bits = x.window(0, n + 10)
    hits = np.mean([(bits[i] == 1) & (bits[i + 1] == 0) & (bits[i + 3] == 1) for i in range(n)])
    m = cylinder_measure(spec, 0.6)
    assert abs(hits - m) <= 4 * math.sqrt(m * (1 - m) / n)
    assert spec.contains(x, int(np.flatnonzero((bits[:-3] == 1) & (bits[1:-2] == 0) & (bits[3:] == 1))[0]))


def test_in_Z_in_W_examples():
    x = pinned({0: 1, 1: 0, 2: 0, 3: 0, 4: 0})
    assert in_Z(x, 0, 4) and in_W(x, 0, 2)
    y = pinned({0: 0})
    assert not in_Z(y, 0, 4) and not in_W(y, 0, 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6))
def test_Z_implies_W(seed, N, gN):
    if gN > N:
        N, gN = gN, N
    x = sample_orbit(0.3, 400, seed)
    for pos in range(300):
        if in_Z(x, pos, N):
            assert in_W(x, pos, gN)


def test_W_frequency():
    p, gN, n = 0.75, 2, 2 * 10**5
    bits = sample_orbit(p, n + gN + 1, seed=8).window(0, n + gN + 1)
    f = len(pattern_starts(bits, gN)) / n
    m = p * (1 - p) ** gN
    assert abs(f - m) <= 4 * math.sqrt(m * (1 - m) / n)


def test_pattern_starts_matches_in_Z():
    x = sample_orbit(0.5, 2000, seed=2)
    bits = x.window(0, 2000)
    s = set(pattern_starts(bits, 3).tolist())
    assert s == {i for i in range(2000 - 3) if in_Z(x, i, 3)}


def test_excursions_structure_and_kac():
    p, N = 0.7, 3
    ex = sample_excursions(p, N, 20000, seed=1, batch=1000)
    assert len(ex) == 20000
    for i in (0, 17, 19999):
        w = ex[i]
        assert w[0] == 1 and not w[1:N + 1].any()
        assert len(pattern_starts(np.concatenate((w, [1] + [0] * N)), N)) == 2
    L = ex.lengths
    assert abs(L.mean() - 1 / measure_Z(p, N)) <= 3 * L.std() / math.sqrt(len(L))


def test_excursion_batches_fixed_by_batch_size():
    a = [e.stream.copy() for e in iter_excursions(0.7, 3, 100, seed=5, batch=10)]
    b = [e.stream.copy() for e in iter_excursions(0.7, 3, 100, seed=5, batch=10)]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
