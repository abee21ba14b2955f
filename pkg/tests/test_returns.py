import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lyapdisc.construction import choose_N, select_parameters
from lyapdisc.returns import (BlockGrammar, ParseError, ReturnBlock, all_valid_partitions,
                              classify_G_ell, first_return_W, good_set_membership, iter_parses,
                              mu_K_bound, parse_blocks, parse_word, partition_good)
from lyapdisc.shift import OrbitBuffer, pattern_starts, sample_excursions


def fixed(bits, p=0.5, seed=0):
    return OrbitBuffer(p, seed, fixed={i: b for i, b in enumerate(bits)})


def grammar(N=4, gN=2, cutoff=10**6, omega=3, beta=0.2, p=0.5):
    return BlockGrammar(p, N, gN, beta, cutoff, omega)


def test_first_return_periodic():
    x = fixed([1, 0, 0] * 50)
    assert first_return_W(x, 0, 2) == 3


def test_first_return_after_Z():
    x = fixed([1, 0, 0, 0, 0, 1, 0, 0])
    assert first_return_W(x, 0, 2) == 5
    with pytest.raises(ValueError):
        first_return_W(fixed([0, 1]), 0, 2)


def test_first_return_cap():
    x = fixed([1, 0, 0] + [1] * 5000)
    with pytest.raises(ParseError, match="cap"):
        first_return_W(x, 0, 2, cap=1000)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4))
def test_first_return_lower_bound(seed, gN):
    x = OrbitBuffer(0.5, seed, fixed={0: 1, **{j: 0 for j in range(1, gN + 1)}})
    assert first_return_W(x, 0, gN) >= gN + 1


def test_parse_example():
    x = fixed([1, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0])
    pr = parse_blocks(x, 0, grammar())
    assert [b.bits for b in pr.blocks()] == [(1, 0, 0, 0, 0), (1, 0, 0)]
    assert pr.t == 2 and pr.tauZ == 8 and pr.S == 2
    assert all(b.is_valid(2) for b in pr.blocks())


def test_single_block_excursion():
    pr = parse_blocks(fixed([1, 0, 0, 0, 0, 1, 0, 0, 0, 0]), 0, grammar())
    assert pr.t == 1 and pr.tauZ == 5


def test_parse_requires_Z():
    with pytest.raises(ValueError):
        parse_blocks(fixed([1, 0, 1]), 0, grammar())
    with pytest.raises(ParseError):
        parse_word(np.array([0, 1, 0, 0], dtype=np.uint8), grammar())


def test_truncated_parse():
    x = fixed([1, 0, 0, 0, 0] + [1, 0, 1] * 2000)
    pr = parse_blocks(x, 0, grammar(), cap=500)
    assert pr.truncated
    rep = good_set_membership(pr)
    assert not rep.verdict and rep.fail_long and rep.truncated


def test_parse_round_trip_and_lengths():
    g = grammar(N=3, gN=2)
    ex = sample_excursions(0.6, 3, 10**4, seed=2, batch=2000)
    for pr, i in zip(iter_parses(ex, g), range(len(ex))):
        assert pr.tauZ == ex.lengths[i] == pr.lengths.sum()
        assert np.array_equal(pr.reconstruct(), ex[i])
        assert pr.ones.sum() == ex[i].sum()


def test_iter_parses_matches_parse_blocks():
    g = grammar(N=3, gN=2)
    ex = sample_excursions(0.6, 3, 50, seed=3, batch=50)
    x = OrbitBuffer(0.6, 0, segments=[(0, ex.stream)])
    for pr, s in zip(iter_parses(ex, g), ex.starts):
        q = parse_blocks(x, int(s), g)
        assert np.array_equal(pr.edges, q.edges) and np.array_equal(pr.ones, q.ones)


def block(length, ones):
    bits = [1] + [0] * (length - 1)
    for j in range(ones - 1):
        bits[length - 1 - 2 * j] = 1
    return ReturnBlock(tuple(bits))


def test_classify_examples():
    g = grammar(N=4, gN=2, beta=0.2, p=0.5)
    v = block(17, 8)
    assert classify_G_ell([v.length], [v.ones], g) == 1
    assert classify_G_ell([3], [1], g) is None
    assert classify_G_ell([15, 64], [7, 32], g) == 2
    assert classify_G_ell([16, 64], [7, 32], g) is None
    assert classify_G_ell([17], [1], g) is None
    small = grammar(N=4, gN=2, cutoff=16)
    assert classify_G_ell([17], [8], small) is None
    with pytest.raises(ValueError):
        classify_G_ell([], [], g)


def make_parse(lengths, g, p_ones=0.5):
    bits = []
    for L in lengths:
        b = [1] + [0] * g.gN + [1, 0] * L
        b = b[:L]
        bits.extend(b)
    word = np.array(bits, dtype=np.uint8)
    pr = parse_word(word, g, np.array([1] + [0] * g.N, dtype=np.uint8))
    assert list(pr.lengths) == list(lengths)
    return pr


def test_partition_greedy_example():
    g = grammar(N=4, gN=2, beta=0.2, omega=2)
    pr = make_parse([16 + 5, 15, 64 + 2], g)
    rep = good_set_membership(pr)
    assert rep.verdict
    assert rep.partition == [(0, 1), (1, 2)]


def test_partition_all_singletons():
    g = grammar(N=3, gN=2, omega=2, beta=0.2)
    pr = make_parse([30, 12, 40], g)
    assert partition_good(pr) == [(0, 1), (1, 1), (2, 1)]


def test_good_set_short_first_only():
    g = grammar(N=4, gN=2, beta=0.2, omega=2)
    pr = make_parse([10, 70], g)
    rep = good_set_membership(pr)
    assert not rep.verdict and rep.fail_short_first
    assert rep.b and rep.c and rep.d and rep.e


def test_brute_force_uniqueness():
    g = grammar(N=3, gN=2, omega=3, beta=0.2)
    pr = make_parse([10, 8, 28, 4, 5, 90], g)
    rep = good_set_membership(pr)
    assert rep.verdict
    found = all_valid_partitions(list(pr.lengths), list(pr.ones), g)
    assert found == [rep.partition]


def test_mu_K_bound_positive_and_grows_with_beta_shrink():
    a = mu_K_bound(0.95, 4, 4, 0.1, 3.0, 2)
    b = mu_K_bound(0.95, 4, 4, 0.05, 3.0, 2)
    assert 0 < a < b


def test_grammar_validation():
    with pytest.raises(ValueError):
        BlockGrammar(0.5, 4, 5, 0.1, 100, 2)
    with pytest.raises(ValueError):
        BlockGrammar(0.5, 4, 2, 0.1, 100, 0)


def test_good_partitions_round_trip_sampled(params_eps2):
    g = params_eps2.grammar
    ex = sample_excursions(g.p, g.N, 3000, seed=1, batch=1000)
    good = 0
    for pr in iter_parses(ex, g):
        rep = good_set_membership(pr)
        if not rep.verdict:
            continue
        good += 1
        parts = rep.partition
        assert sum(ell for _, ell in parts) == pr.t
        assert [k for k, _ in parts] == list(np.cumsum([0] + [e for _, e in parts[:-1]]))
        assert all(1 <= ell <= g.omega for _, ell in parts)
    assert good > 0
