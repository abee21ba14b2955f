"""Two-sided binary sequences, cylinders and Bernoulli sampling.

Sequences are realized lazily: an :class:`OrbitBuffer` materializes a window
``[lo, hi)`` of coordinates and extends it on demand from counter-based
random streams, one stream per chunk and side, so the value of a coordinate
never depends on the order in which the buffer was grown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

CHUNK = 4096

# stream tags folded into every spawn key
_RIGHT, _LEFT, _EXCURSION, _ORBIT = 0, 1, 2, 3


def philox(seed: int, key: Sequence[int] = ()) -> np.random.Generator:
    """Counter-based generator for the stream ``(seed, key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def bernoulli_bits(rng: np.random.Generator, p: float, n: int) -> np.ndarray:
    return (rng.random(n) < p).astype(np.uint8)


class OrbitBuffer:
    """A point of the full shift on {0,1}, materialized lazily.

    ``fixed`` pins coordinates (index -> bit); ``segments`` pins runs of
    coordinates given as ``(start, bits)``. Pinned coordinates override the
    i.i.d. Bernoulli(p) extender, which is how conditioned samples are built.
    """

    def __init__(self, p: float, seed: int, key: Sequence[int] = (),
                 fixed: Mapping[int, int] | None = None,
                 segments: Iterable[tuple[int, np.ndarray]] = (),
                 chunk: int = CHUNK):
        if not 0.0 < p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {p}")
        self.p = float(p)
        self.seed = int(seed)
        self.key = tuple(key)
        self.chunk = int(chunk)
        self.fixed = {int(i): int(b) for i, b in (fixed or {}).items()}
        if any(b not in (0, 1) for b in self.fixed.values()):
            raise ValueError("pinned symbols must be 0 or 1")
        self.segments = [(int(s), np.asarray(b, dtype=np.uint8)) for s, b in segments]
        self._lo = 0
        self._hi = 0
        self._bits = np.zeros(0, dtype=np.uint8)
        self.ensure(-1, 1)

    @property
    def lo(self) -> int:
        return self._lo

    @property
    def hi(self) -> int:
        return self._hi

    def _chunk(self, side: int, k: int) -> np.ndarray:
        rng = philox(self.seed, self.key + (side, k))
        return bernoulli_bits(rng, self.p, self.chunk)

    def _pin(self, lo: int, bits: np.ndarray) -> None:
        hi = lo + len(bits)
        for i, b in self.fixed.items():
            if lo <= i < hi:
                bits[i - lo] = b
        for s, seg in self.segments:
            a, z = max(lo, s), min(hi, s + len(seg))
            if a < z:
                bits[a - lo:z - lo] = seg[a - s:z - s]

    def ensure(self, lo: int, hi: int) -> None:
        """Materialize at least ``[lo, hi)``."""
        c = self.chunk
        new_lo = min(self._lo, (lo // c) * c)
        new_hi = max(self._hi, -(-hi // c) * c)
        if new_lo == self._lo and new_hi == self._hi:
            return
        parts = [self._gen(s) for s in range(new_lo, self._lo, c)]
        parts.append(self._bits)
        parts.extend(self._gen(s) for s in range(self._hi, new_hi, c))
        self._bits = np.concatenate(parts)
        self._lo, self._hi = new_lo, new_hi

    def _gen(self, start: int) -> np.ndarray:
        c = self.chunk
        bits = self._chunk(_RIGHT, start // c) if start >= 0 else self._chunk(_LEFT, -start // c - 1)
        self._pin(start, bits)
        return bits

    def window(self, lo: int, hi: int) -> np.ndarray:
        """Bits at coordinates ``lo..hi-1`` (a copy)."""
        self.ensure(lo, hi)
        return self._bits[lo - self._lo:hi - self._lo].copy()

    def view(self, lo: int, hi: int) -> np.ndarray:
        self.ensure(lo, hi)
        return self._bits[lo - self._lo:hi - self._lo]

    def __getitem__(self, i: int) -> int:
        self.ensure(i, i + 1)
        return int(self._bits[i - self._lo])

    def snapshot(self) -> tuple[int, np.ndarray]:
        return self._lo, self._bits.copy()


@dataclass(frozen=True)
class Distance:
    value: float
    exact: bool


def metric_distance(x: OrbitBuffer, y: OrbitBuffer, radius: int | None = None) -> Distance:
    """``2**-N(x, y)`` with ``N`` the largest radius of agreement.

    Only coordinates with ``|n| <= radius`` are inspected; when the points agree
    on all of them the result is ``2**-(radius+1)`` and is only an upper bound
    for the true distance (``exact=False``).
    """
    if radius is None:
        radius = min(-x.lo, x.hi - 1, -y.lo, y.hi - 1)
    if radius < 0:
        raise ValueError("empty common range")
    a = x.window(-radius, radius + 1)
    b = y.window(-radius, radius + 1)
    diff = np.nonzero(a != b)[0]
    if diff.size == 0:
        return Distance(2.0 ** -(radius + 1), exact=False)
    n = int(np.min(np.abs(diff - radius)))
    return Distance(2.0 ** -n, exact=True)


def sample_orbit(p: float, length: int, seed: int, key: Sequence[int] = ()) -> OrbitBuffer:
    x = OrbitBuffer(p, seed, key=key)
    x.ensure(0, length)
    return x


def z_pattern(N: int) -> np.ndarray:
    pat = np.zeros(N + 1, dtype=np.uint8)
    pat[0] = 1
    return pat


def sample_conditioned_Z(p: float, N: int, seed: int, length: int,
                         key: Sequence[int] = ()) -> OrbitBuffer:
    """Exact sample of μ_Z: the Z pattern at ``0..N`` and i.i.d. bits elsewhere."""
    if N < 1:
        raise ValueError("N must be >= 1")
    x = OrbitBuffer(p, seed, key=key, segments=[(0, z_pattern(N))])
    x.ensure(0, max(length, N + 1))
    return x


@dataclass(frozen=True)
class CylinderSpec:
    constraints: tuple[tuple[int, int], ...]

    def __post_init__(self):
        idx = [i for i, _ in self.constraints]
        if len(set(idx)) != len(idx):
            raise ValueError("cylinder indices must be distinct")
        if any(b not in (0, 1) for _, b in self.constraints):
            raise ValueError("cylinder bits must be 0 or 1")

    @classmethod
    def from_word(cls, word: Sequence[int], start: int = 0) -> "CylinderSpec":
        return cls(tuple((start + i, int(b)) for i, b in enumerate(word)))

    def shifted(self, k: int) -> "CylinderSpec":
        return CylinderSpec(tuple((i + k, b) for i, b in self.constraints))

    def contains(self, x: OrbitBuffer, pos: int = 0) -> bool:
        return all(x[pos + i] == b for i, b in self.constraints)


def z_cylinder(N: int) -> CylinderSpec:
    return CylinderSpec.from_word(z_pattern(N))


def w_cylinder(gN: int) -> CylinderSpec:
    return CylinderSpec.from_word(z_pattern(gN))


def cylinder_measure(spec: CylinderSpec, p: float) -> float:
    ones = sum(b for _, b in spec.constraints)
    return p ** ones * (1.0 - p) ** (len(spec.constraints) - ones)


def pattern_starts(bits: np.ndarray, zeros: int) -> np.ndarray:
    """Indices ``i`` with ``bits[i] == 1`` followed by ``zeros`` zeros.

    Only indices whose whole pattern lies inside ``bits`` are reported.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    n = len(bits) - zeros
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    c = np.concatenate(([0], np.cumsum(bits, dtype=np.int64)))
    ok = (bits[:n] == 1) & (c[1 + zeros:n + 1 + zeros] - c[1:n + 1] == 0)
    return np.nonzero(ok)[0]


def in_Z(x: OrbitBuffer, pos: int, N: int) -> bool:
    w = x.view(pos, pos + N + 1)
    return bool(w[0] == 1 and not w[1:].any())


def in_W(x: OrbitBuffer, pos: int, gN: int) -> bool:
    return in_Z(x, pos, gN)


@dataclass
class Excursions:
    """Consecutive μ_Z excursions cut from one regenerative stream.

    ``stream[starts[i]:starts[i+1]]`` is excursion ``i``; it begins with the Z
    pattern and ends right before the next one. ``stream`` carries the Z pattern
    of the return after the last excursion. Along a μ_Z orbit the excursions are
    i.i.d., so consecutive ones also serve as (x, f^τ x) pairs.
    """

    stream: np.ndarray
    starts: np.ndarray
    N: int
    cap: int

    def __len__(self) -> int:
        return len(self.starts) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.starts)

    @property
    def truncated(self) -> np.ndarray:
        return self.lengths > self.cap

    def ones(self) -> np.ndarray:
        c = np.concatenate(([0], np.cumsum(self.stream, dtype=np.int64)))
        return c[self.starts[1:]] - c[self.starts[:-1]]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.stream[self.starts[i]:self.starts[i + 1]]


def _excursion_batch(p: float, N: int, count: int, seed: int, key: tuple, cap: int) -> Excursions:
    rng = philox(seed, key)
    mean = 1.0 / (p * (1.0 - p) ** N)
    parts = [z_pattern(N)]
    total = N + 1
    found = np.zeros(0, dtype=np.int64)
    while True:
        need = int(1.2 * (count + 1) * mean) + 64 * (N + 1)
        more = bernoulli_bits(rng, p, max(need - total, 1024))
        parts.append(more)
        total += len(more)
        stream = np.concatenate(parts)
        parts = [stream]
        found = pattern_starts(stream, N)
        if len(found) >= count + 1:
            break
    starts = found[:count + 1]
    stream = stream[:starts[-1] + N + 1].copy()
    return Excursions(stream, starts.astype(np.int64), N, cap)


def iter_excursions(p: float, N: int, count: int, seed: int, batch: int = 512,
                    cap: int | None = None) -> Iterator[Excursions]:
    """Yield batches of i.i.d. μ_Z excursions, ``count`` in total.

    Batch ``b`` is drawn from the stream ``(seed, excursion, b)``; the split is
    fixed by ``batch`` alone, never by how batches are scheduled.
    """
    if cap is None:
        cap = int(50.0 / (p * (1.0 - p) ** N))
    b = 0
    left = count
    while left > 0:
        n = min(batch, left)
        yield _excursion_batch(p, N, n, seed, (_EXCURSION, b), cap)
        left -= n
        b += 1


def sample_excursions(p: float, N: int, count: int, seed: int, batch: int = 512,
                      cap: int | None = None) -> Excursions:
    batches = list(iter_excursions(p, N, count, seed, batch, cap))
    streams, starts, off = [], [], 0
    for ex in batches:
        body = ex.stream[:ex.starts[-1]]
        streams.append(body)
        starts.append(ex.starts[:-1] + off)
        off += len(body)
    streams.append(z_pattern(N))
    starts.append(np.array([off]))
    return Excursions(np.concatenate(streams), np.concatenate(starts), N, batches[0].cap)


def measure_Z(p: float, N: int) -> float:
    return p * (1.0 - p) ** N


def return_cutoff(zeta: float, p: float, N: int) -> int:
    return int(math.floor(zeta / measure_Z(p, N)))
