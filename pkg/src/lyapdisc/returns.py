"""Returns to W and Z, W-return blocks, the classes 𝒢_ℓ and the good set."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .shift import Excursions, OrbitBuffer, in_W, in_Z, pattern_starts


class ParseError(RuntimeError):
    pass


@dataclass(frozen=True)
class BlockGrammar:
    """Thresholds that decide block classes.

    ``cutoff`` is ``floor(ζ μ(Z)^{-1})``; rounding down only shrinks G.
    """

    p: float
    N: int
    gN: int
    beta: float
    cutoff: int
    omega: int

    def __post_init__(self):
        if not 1 <= self.gN <= self.N:
            raise ValueError("need 1 <= γN <= N")
        if self.omega < 1:
            raise ValueError("ω must be positive")

    def threshold(self, j: int) -> int:
        return self.N ** (j + 1)

    def deviation_ok(self, length, ones):
        return np.abs(np.asarray(ones) - self.p * np.asarray(length)) <= self.beta * np.asarray(length)


@dataclass(frozen=True)
class ReturnBlock:
    bits: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.bits)

    @property
    def ones(self) -> int:
        return sum(self.bits)

    def is_valid(self, gN: int) -> bool:
        v = np.asarray(self.bits, dtype=np.uint8)
        if len(v) < gN + 1 or v[0] != 1 or v[1:gN + 1].any():
            return False
        return len(pattern_starts(v[gN + 1:], gN)) == 0

    def in_Z(self, N: int) -> bool:
        return len(self.bits) >= N + 1 and self.bits[0] == 1 and not any(self.bits[1:N + 1])


def first_return_W(x: OrbitBuffer, pos: int, gN: int, cap: int = 1 << 24) -> int:
    """Smallest ``n >= 1`` with ``f^{pos+n} x`` in W."""
    if not in_W(x, pos, gN):
        raise ValueError(f"position {pos} is not in W")
    span = 256
    while True:
        hi = pos + min(span, cap) + gN + 1
        s = pattern_starts(x.view(pos + 1, hi), gN)
        if len(s):
            return int(s[0]) + 1
        if span >= cap:
            raise ParseError(f"no return to W within the cap {cap}")
        span *= 4


@dataclass
class BlockParse:
    """Excursion from Z split at its returns to W.

    ``edges[n]`` is ``τ_W^{(n)}`` (``edges[0] = 0``, ``edges[t] = τ_Z``) and
    ``ones[n]`` counts the ones of block ``n``.
    """

    bits: np.ndarray
    edges: np.ndarray
    ones: np.ndarray
    grammar: BlockGrammar
    truncated: bool = False

    @property
    def t(self) -> int:
        return len(self.edges) - 1

    @property
    def tauZ(self) -> int:
        return int(self.edges[-1])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def return_times(self) -> np.ndarray:
        return self.edges[1:]

    @property
    def cumulative_ones(self) -> np.ndarray:
        return np.cumsum(self.ones)

    @property
    def S(self) -> int:
        return int(self.ones.sum())

    def blocks(self) -> list[ReturnBlock]:
        return [ReturnBlock(tuple(int(b) for b in self.bits[a:z]))
                for a, z in zip(self.edges[:-1], self.edges[1:])]

    def deviation_flags(self) -> np.ndarray:
        return self.grammar.deviation_ok(self.lengths, self.ones)

    def long_flags(self, j: int = 1) -> np.ndarray:
        return self.lengths >= self.grammar.threshold(j)

    def reconstruct(self) -> np.ndarray:
        return np.concatenate([np.asarray(b.bits, dtype=np.uint8) for b in self.blocks()])


def parse_word(word: np.ndarray, grammar: BlockGrammar, trailing: np.ndarray | None = None,
               truncated: bool = False) -> BlockParse:
    """Parse one excursion given as the bits from its Z-start up to the next.

    ``trailing`` holds at least the γN bits after the word, needed to certify
    W-starts close to its end; by default the Z pattern of the next return.
    """
    word = np.asarray(word, dtype=np.uint8)
    if trailing is None:
        trailing = np.zeros(grammar.gN, dtype=np.uint8)
        if not truncated:
            trailing = np.concatenate(([1], trailing)).astype(np.uint8)
    ext = np.concatenate((word, trailing))
    ws = pattern_starts(ext, grammar.gN)
    ws = ws[ws < len(word)]
    if len(ws) == 0 or ws[0] != 0:
        raise ParseError("excursion must begin with the W pattern")
    edges = np.append(ws, len(word)).astype(np.int64)
    c = np.concatenate(([0], np.cumsum(word, dtype=np.int64)))
    ones = c[edges[1:]] - c[edges[:-1]]
    return BlockParse(word, edges, ones, grammar, truncated)


def parse_blocks(x: OrbitBuffer, pos: int, grammar: BlockGrammar, cap: int | None = None) -> BlockParse:
    """Blocks of the excursion of ``x`` starting at the Z-start ``pos``."""
    N = grammar.N
    if not in_Z(x, pos, N):
        raise ValueError(f"position {pos} is not in Z")
    cap = cap if cap is not None else 1 << 24
    span = 1024
    while True:
        n = min(span, cap)
        w = x.view(pos + 1, pos + n + N + 1)
        z = pattern_starts(w, N)
        if len(z):
            tau = int(z[0]) + 1
            word = x.window(pos, pos + tau)
            return parse_word(word, grammar, x.window(pos + tau, pos + tau + grammar.gN + 1))
        if span >= cap:
            word = x.window(pos, pos + cap)
            return parse_word(word, grammar, x.window(pos + cap, pos + cap + grammar.gN), truncated=True)
        span *= 4


def iter_parses(ex: Excursions, grammar: BlockGrammar) -> Iterator[BlockParse]:
    """Parses of every excursion in a sampled batch."""
    s = ex.stream
    ws = pattern_starts(s, grammar.gN)
    c = np.concatenate(([0], np.cumsum(s, dtype=np.int64)))
    idx = np.searchsorted(ws, ex.starts)
    for i in range(len(ex)):
        a, z = int(ex.starts[i]), int(ex.starts[i + 1])
        e = ws[idx[i]:idx[i + 1] + 1]
        ones = c[e[1:]] - c[e[:-1]]
        yield BlockParse(s[a:z], (e - a).astype(np.int64), ones, grammar,
                         truncated=bool(z - a > ex.cap))


def classify_G_ell(lengths: Sequence[int], ones: Sequence[int], grammar: BlockGrammar) -> int | None:
    """``ℓ`` when the tuple of blocks lies in 𝒢_ℓ (``ℓ`` = its length), else None."""
    ell = len(lengths)
    if ell == 0:
        raise ValueError("empty tuple")
    N = grammar.N
    for j in range(1, ell):
        if lengths[j - 1] >= N ** (j + 1):
            return None
    last, s = int(lengths[-1]), int(ones[-1])
    if not N ** (ell + 1) <= last <= grammar.cutoff:
        return None
    if abs(s - grammar.p * last) > grammar.beta * last:
        return None
    return ell


def classify_blocks(blocks: Sequence[ReturnBlock], grammar: BlockGrammar) -> int | None:
    return classify_G_ell([b.length for b in blocks], [b.ones for b in blocks], grammar)


@dataclass
class GoodSetReport:
    """Good-set verdict with each defining condition and each failure mode."""

    a: bool
    b: bool
    c: bool
    d: bool
    e: bool
    fail_short_first: bool
    fail_deviation: bool
    fail_short_run: bool
    fail_short_last: bool
    fail_long: bool
    truncated: bool
    partition: list[tuple[int, int]] | None = field(default=None)

    @property
    def verdict(self) -> bool:
        return self.a and self.b and self.c and self.d and self.e


def _short_run(lengths: np.ndarray, N: int, omega: int) -> bool:
    t = len(lengths)
    for i in range(0, t - omega + 1):
        if all(lengths[i + j - 1] < N ** (j + 1) for j in range(1, omega + 1)):
            return True
    return False


def good_set_membership(parse: BlockParse, grammar: BlockGrammar | None = None,
                        with_partition: bool = True) -> GoodSetReport:
    g = grammar or parse.grammar
    L, S = parse.lengths, parse.ones
    N, om = g.N, g.omega
    dev = g.deviation_ok(L, S)
    a = classify_G_ell(L[:1], S[:1], g) == 1
    b = bool(np.all(dev[L >= N * N]))
    c = not _short_run(L, N, om)
    d = bool(L[-1] >= N ** (om + 1))
    e = (not parse.truncated) and parse.tauZ <= g.cutoff
    rep = GoodSetReport(a, b, c, d, e,
                        fail_short_first=bool(L[0] < N * N),
                        fail_deviation=not b,
                        fail_short_run=not c,
                        fail_short_last=not d,
                        fail_long=not e,
                        truncated=parse.truncated)
    if rep.verdict and with_partition:
        rep.partition = partition_good(parse, g)
    return rep


class PartitionError(AssertionError):
    pass


def partition_good(parse: BlockParse, grammar: BlockGrammar | None = None) -> list[tuple[int, int]]:
    """Greedy split of a good excursion into tuples from 𝒢_ℓ, as ``(start, ℓ)``."""
    g = grammar or parse.grammar
    L, S = parse.lengths, parse.ones
    t = len(L)
    parts = []
    k = 0
    while k < t:
        ell = 1
        while k + ell - 1 < t and L[k + ell - 1] < g.N ** (ell + 1):
            ell += 1
        if k + ell > t or ell > g.omega:
            raise PartitionError(f"no closing block for the part starting at block {k}")
        if classify_G_ell(L[k:k + ell], S[k:k + ell], g) != ell:
            raise PartitionError(f"part ({k}, {ell}) does not classify into its class")
        parts.append((k, ell))
        k += ell
    return parts


def all_valid_partitions(lengths: Sequence[int], ones: Sequence[int],
                         grammar: BlockGrammar, max_t: int = 8) -> list[list[tuple[int, int]]]:
    """Every split of the block sequence into parts from 𝒢_ℓ with ``ℓ <= ω``."""
    t = len(lengths)
    if t > max_t:
        raise ValueError(f"brute force limited to t <= {max_t}")
    found = []
    for cuts in itertools.product((False, True), repeat=t - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [t]
        parts = [(a, z - a) for a, z in zip(bounds[:-1], bounds[1:])]
        if all(ell <= grammar.omega and
               classify_G_ell(lengths[a:a + ell], ones[a:a + ell], grammar) == ell
               for a, ell in parts):
            found.append(parts)
    return found


def mu_K_bound(p: float, N: int, gN: int, beta: float, zeta: float, omega: int) -> float:
    """Closed-form majorant of the mass of Z outside G and the long returns."""
    gamma = gN / N
    muW = p * (1 - p) ** gN
    t1 = N * N * muW
    t2 = (zeta / p * (1 - p) ** ((gamma - 2) * N)
          * math.exp(-N * N * beta * beta / 2) / -math.expm1(-beta * beta / 2))
    t3 = zeta * N ** ((omega + 1) * (omega + 2) / 2) * p ** (omega - 1) * (1 - p) ** ((omega * gamma - 1) * N)
    t4 = N ** (omega + 1) * muW
    return t1 + t2 + t3 + t4
