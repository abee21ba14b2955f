"""SL(2,R) cocycles over the shift: evaluation, products, exponents, norms."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .shift import (OrbitBuffer, philox, sample_excursions, measure_Z, _ORBIT)

LN2 = math.log(2.0)

Mat2 = np.ndarray


class ResolutionError(RuntimeError):
    """A dynamic cocycle could not settle its case inside the buffer."""

    def __init__(self, message: str, needed: int | None = None):
        super().__init__(message)
        self.needed = needed


class BudgetExceeded(RuntimeError):
    pass


def shear_r1(theta: float) -> Mat2:
    return np.array([[1.0, float(theta)], [0.0, 1.0]])


def shear_r2(theta: float) -> Mat2:
    return np.array([[1.0, 0.0], [float(theta), 1.0]])


def diag(a: float) -> Mat2:
    return np.array([[a, 0.0], [0.0, 1.0 / a]])


def spectral_norm(m: Mat2) -> float:
    return float(K.spectral_norm(np.asarray(m, dtype=np.float64)))


def det(m: Mat2) -> float:
    return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])


def sin_angle(u: Sequence[float], v: Sequence[float]) -> float:
    """|sin| of the angle between the lines through ``u`` and ``v``."""
    u0, u1 = float(u[0]), float(u[1])
    v0, v1 = float(v[0]), float(v[1])
    nu, nv = math.hypot(u0, u1), math.hypot(v0, v1)
    if nu == 0.0 or nv == 0.0:
        return 1.0
    return abs(u0 * v1 - u1 * v0) / (nu * nv)


@dataclass(frozen=True)
class ProjVec:
    """A vector as a sign-normalized unit direction plus natural-log magnitude."""

    direction: tuple[float, float]
    logmag: float

    @classmethod
    def from_scaled(cls, a: float, b: float, logmag: float = 0.0) -> "ProjVec":
        n = math.hypot(a, b)
        if n == 0.0:
            return cls((0.0, 0.0), -math.inf)
        a, b = a / n, b / n
        if a < 0 or (a == 0 and b < 0):
            a, b = -a, -b
        return cls((a + 0.0, b + 0.0), logmag + math.log(n))

    def sin_to(self, other: Sequence[float]) -> float:
        return sin_angle(self.direction, other)


@dataclass(frozen=True)
class ScaledMat:
    """``matrix * exp(logscale)`` with the largest matrix entry in [1/2, 1)."""

    matrix: Mat2
    logscale: float

    def log_norm(self) -> float:
        return self.logscale + math.log(spectral_norm(self.matrix))

    def det_defect(self) -> float:
        d = det(self.matrix)
        if d == 0.0:
            return math.inf
        return abs(math.expm1(math.log(abs(d)) + 2.0 * self.logscale)) if d > 0 else math.inf

    def value(self) -> Mat2:
        return self.matrix * math.exp(self.logscale)

    def apply(self, v: Sequence[float]) -> ProjVec:
        w = self.matrix @ np.asarray(v, dtype=np.float64)
        return ProjVec.from_scaled(w[0], w[1], self.logscale)


@dataclass
class Factors:
    """Step data for a run of positions, consumed by the compiled kernels.

    Plain table cocycles leave ``rs``/``kind``/``num``/``den`` unset.
    """

    tab: np.ndarray
    sym: np.ndarray
    rs: np.ndarray | None = None
    kind: np.ndarray | None = None
    num: np.ndarray | None = None
    den: np.ndarray | None = None
    t: float = 1.0

    def __len__(self) -> int:
        return len(self.sym)

    @property
    def plain(self) -> bool:
        return self.kind is None

    def full(self) -> "Factors":
        if not self.plain:
            return self
        n = len(self.sym)
        return Factors(self.tab, self.sym, np.zeros(n), np.zeros(n, dtype=np.int8),
                       np.zeros(n), np.ones(n), self.t)

    def product(self, lo: int = 0, hi: int | None = None) -> ScaledMat:
        hi = len(self.sym) if hi is None else hi
        if self.plain:
            m, ls = K.product_table(self.tab, self.sym, lo, hi)
        else:
            m, ls = K.product(self.tab, self.sym, self.rs, self.kind, self.num,
                              self.den, self.t, lo, hi)
        return ScaledMat(m, ls)

    def push(self, v: Sequence[float], lo: int = 0, hi: int | None = None) -> tuple[float, float, float]:
        """Raw image of ``v`` through steps ``lo..hi-1`` as ``(a, b, logmag)``."""
        hi = len(self.sym) if hi is None else hi
        a, b, ex = self.push_exp(v, lo, hi)
        return a, b, ex * LN2

    def push_exp(self, v: Sequence[float], lo: int = 0, hi: int | None = None) -> tuple[float, float, int]:
        """Like :meth:`push` with the scale returned as a power of two."""
        hi = len(self.sym) if hi is None else hi
        f = self.full()
        return K.push(f.tab, f.sym, f.rs, f.kind, f.num, f.den, f.t, lo, hi,
                      float(v[0]), float(v[1]))

    def matrix_at(self, i: int) -> Mat2:
        return self.product(i, i + 1).value()


class CocycleHandle(ABC):
    """A map (orbit, position) -> SL(2,R)."""

    #: fixed dependence window ``(m1, m2)`` on coordinates ``[-m1, m2]``, or None
    window: tuple[int, int] | None = None

    @abstractmethod
    def factors(self, x: OrbitBuffer, lo: int, hi: int) -> Factors:
        """Step data for positions ``lo..hi-1``."""

    def evaluate(self, x: OrbitBuffer, pos: int) -> Mat2:
        return self.factors(x, pos, pos + 1).matrix_at(0)

    def consulted(self, x: OrbitBuffer, pos: int) -> tuple[int, int]:
        """Coordinates ``[a, b]`` read when evaluating at ``pos``."""
        m1, m2 = self.window
        return pos - m1, pos + m2


class WindowCocycle(CocycleHandle):
    """Locally constant cocycle reading coordinates ``[pos-m1, pos+m2]``.

    ``table[w]`` is the value on the word whose bit ``j`` (weight ``2**j``) is
    the coordinate ``pos - m1 + j``.
    """

    def __init__(self, table: np.ndarray, m1: int = 0, m2: int = 0, name: str = ""):
        table = np.ascontiguousarray(table, dtype=np.float64)
        if table.shape != (2 ** (m1 + m2 + 1), 2, 2):
            raise ValueError(f"table shape {table.shape} does not match window [-{m1}, {m2}]")
        self.table = table
        self.window = (int(m1), int(m2))
        self.name = name

    @property
    def width(self) -> int:
        return self.window[0] + self.window[1] + 1

    def symbols(self, bits: np.ndarray) -> np.ndarray:
        """Word indices for every full window inside ``bits``."""
        w = self.width
        n = len(bits) - w + 1
        sym = np.zeros(n, dtype=np.int64)
        for j in range(w):
            sym |= bits[j:j + n].astype(np.int64) << j
        return sym

    def factors(self, x: OrbitBuffer, lo: int, hi: int) -> Factors:
        m1, m2 = self.window
        return Factors(self.table, self.symbols(x.view(lo - m1, hi + m2)))

    def factors_from_bits(self, bits: np.ndarray) -> Factors:
        """Steps at positions ``m1 .. len(bits)-m2-1`` of a bare bit array."""
        return Factors(self.table, self.symbols(np.asarray(bits, dtype=np.uint8)))

    def conjugate(self, c: Mat2) -> "WindowCocycle":
        c = np.asarray(c, dtype=np.float64)
        ci = np.linalg.inv(c)
        return WindowCocycle(c @ self.table @ ci, *self.window, name=f"conj({self.name})")

    def minus(self, other: "WindowCocycle") -> tuple[np.ndarray, tuple[int, int]]:
        """Value table of ``self - other`` on the joint window."""
        m1 = max(self.window[0], other.window[0])
        m2 = max(self.window[1], other.window[1])
        return self.lift(m1, m2) - other.lift(m1, m2), (m1, m2)

    def lift(self, m1: int, m2: int) -> np.ndarray:
        """Table re-indexed on the larger window ``[-m1, m2]``."""
        a1, a2 = self.window
        if m1 < a1 or m2 < a2:
            raise ValueError("can only lift to a larger window")
        w = m1 + m2 + 1
        words = np.arange(2 ** w, dtype=np.int64)
        inner = (words >> (m1 - a1)) & ((1 << self.width) - 1)
        return self.table[inner]


def a_sigma(sigma: float) -> WindowCocycle:
    if not sigma > 1:
        raise ValueError(f"sigma must exceed 1, got {sigma}")
    return WindowCocycle(np.stack([diag(1.0 / sigma), diag(sigma)]), name=f"A_{sigma:g}")


def f_sigma(sigma: float) -> WindowCocycle:
    if not sigma > 1:
        raise ValueError(f"sigma must exceed 1, got {sigma}")
    return WindowCocycle(np.stack([np.eye(2), diag(sigma)]), name=f"F_{sigma:g}")


def identity_cocycle() -> WindowCocycle:
    return WindowCocycle(np.stack([np.eye(2), np.eye(2)]), name="identity")


def constant_cocycle(m: Mat2) -> WindowCocycle:
    m = np.asarray(m, dtype=np.float64)
    return WindowCocycle(np.stack([m, m]), name="constant")


def cocycle_product(A: CocycleHandle, x: OrbitBuffer, pos: int, n: int) -> ScaledMat:
    """``A^n(f^pos x) = A(pos+n-1) ... A(pos)`` in log-scaled form."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return ScaledMat(np.eye(2), 0.0)
    return A.factors(x, pos, pos + n).product()


@dataclass(frozen=True)
class LyapEstimate:
    mean: float
    stderr: float
    orbit_length: int
    replicas: int
    values: tuple[float, ...] = field(default=(), repr=False, compare=False)

    @classmethod
    def from_values(cls, values: Sequence[float], T: int) -> "LyapEstimate":
        v = np.asarray(values, dtype=np.float64)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
        return cls(float(v.mean()), se, int(T), len(v), tuple(float(a) for a in v))

    def zscore(self, exact: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == exact else math.inf
        return (self.mean - exact) / self.stderr


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def lyapunov_mc(A: CocycleHandle, p: float, T: int, M: int, seed: int,
                workers: int = 1, key: Sequence[int] = ()) -> LyapEstimate:
    """Replica average of ``(1/T) log ||A^T(x)||`` along μ_p-typical orbits.

    Replica ``r`` reads the orbit stream ``(seed, key, orbit, r)``; the result
    does not depend on ``workers``.
    """
    if T < 1000:
        raise ValueError("T must be at least 1000")
    if M < 1:
        raise ValueError("need at least one replica")

    def one(r: int) -> float:
        x = OrbitBuffer(p, seed, key=tuple(key) + (_ORBIT, r), chunk=1 << 16)
        return cocycle_product(A, x, 0, T).log_norm() / T

    return LyapEstimate.from_values(_map(one, range(M), workers), T)


def _pair_diam(mats: np.ndarray) -> float:
    """Largest spectral-norm distance within a set of 2x2 matrices."""
    u = np.unique(mats.reshape(-1, 4), axis=0)
    if len(u) < 2:
        return 0.0
    best = 0.0
    for i in range(len(u) - 1):
        d = (u[i + 1:] - u[i]).reshape(-1, 2, 2)
        best = max(best, float(np.max(_norms(d))))
    return best


def _norms(mats: np.ndarray) -> np.ndarray:
    a, b, c, d = mats[:, 0, 0], mats[:, 0, 1], mats[:, 1, 0], mats[:, 1, 1]
    f = a * a + b * b + c * c + d * d
    dt = a * d - b * c
    return np.sqrt(0.5 * (f + np.sqrt(np.maximum(f * f - 4 * dt * dt, 0.0))))


@dataclass(frozen=True)
class HolderNorm:
    sup: float
    seminorm: float

    @property
    def norm(self) -> float:
        return self.sup + self.seminorm


HOLDER_WINDOW_CAP = 24


def holder_parts(table: np.ndarray, m1: int, m2: int, alpha: float) -> HolderNorm:
    """Sup term and α-seminorm of a window table, by enumeration.

    A pair with ``N(x, y) = k`` agrees on ``|n| < k``; past ``max(m1, m2)``
    every such pair has the same window word, so only ``k <= max(m1, m2)``
    contributes.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if m1 + m2 > HOLDER_WINDOW_CAP:
        raise ValueError(f"window [-{m1}, {m2}] too large for enumeration; "
                         "use holder_distance_sampled")
    sup = float(np.max(_norms(table)))
    words = np.arange(len(table), dtype=np.int64)
    semi = 0.0
    for k in range(0, max(m1, m2) + 1):
        # bits of the window at coordinates |n| < k
        mask = 0
        for n in range(-k + 1, k):
            j = n + m1
            if 0 <= j <= m1 + m2:
                mask |= 1 << j
        keys = words & mask
        order = np.argsort(keys, kind="stable")
        ks = keys[order]
        cuts = np.flatnonzero(np.diff(ks)) + 1
        diam = max(_pair_diam(table[g]) for g in np.split(order, cuts))
        semi = max(semi, diam * 2.0 ** (alpha * k))
    return HolderNorm(sup, semi)


def holder_norm_exact(A: WindowCocycle, alpha: float, B: WindowCocycle | None = None) -> float:
    """``||A||_α``, or ``||A - B||_α`` when ``B`` is given."""
    if B is None:
        table, (m1, m2) = A.table, A.window
    else:
        table, (m1, m2) = A.minus(B)
    return holder_parts(table, m1, m2, alpha).norm


@dataclass(frozen=True)
class SampledHolder:
    sup: float
    seminorm: float
    pairs: int
    quotients: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def lower_bound(self) -> float:
        return self.sup + self.seminorm


def holder_distance_sampled(A: CocycleHandle, B: CocycleHandle, alpha: float,
                            samples: int, radius: int, seed: int,
                            p: float = 0.5) -> SampledHolder:
    """Certified lower bound on ``||A - B||_α`` from random pairs.

    Each pair is a random point ``x`` and its copy ``y`` with one coordinate at
    ``±k`` flipped, so ``N(x, y) = k`` exactly.
    """
    rng = philox(seed, (7,))
    ks = rng.integers(0, radius + 1, size=samples)
    sides = rng.integers(0, 2, size=samples)
    sup = semi = 0.0
    q = np.zeros(samples)
    for i in range(samples):
        k = int(ks[i])
        x = OrbitBuffer(p, seed, key=(8, i))
        flip = k if (sides[i] or k == 0) else -k
        y = OrbitBuffer(p, seed, key=(8, i), fixed={flip: 1 - x[flip]})
        dx = A.evaluate(x, 0) - B.evaluate(x, 0)
        dy = A.evaluate(y, 0) - B.evaluate(y, 0)
        sup = max(sup, spectral_norm(dx), spectral_norm(dy))
        q[i] = spectral_norm(dx - dy) * 2.0 ** (alpha * k)
        semi = max(semi, q[i])
    return SampledHolder(sup, semi, samples, q)


def fiber_bunching_product(A: WindowCocycle, n: int, cap: int = 24) -> float:
    """``sup_x ||A^n(x)|| ||A^n(x)^{-1}||`` over all words, exactly."""
    if n < 1:
        raise ValueError("n must be positive")
    m1, m2 = A.window
    L = n + m1 + m2
    if L > cap:
        raise ValueError(f"enumeration of 2^{L} words exceeds the cap 2^{cap}")
    words = np.arange(2 ** L, dtype=np.int64)
    bits = ((words[:, None] >> np.arange(L)) & 1).astype(np.int64)
    w = A.width
    prod = np.broadcast_to(np.eye(2), (len(words), 2, 2)).copy()
    for i in range(n):
        idx = np.zeros(len(words), dtype=np.int64)
        for j in range(w):
            idx |= bits[:, i + j] << j
        prod = A.table[idx] @ prod
    s1 = _norms(prod)
    dets = np.abs(prod[:, 0, 0] * prod[:, 1, 1] - prod[:, 0, 1] * prod[:, 1, 0])
    return float(np.max(s1 * s1 / dets))


def is_fiber_bunched(A: WindowCocycle, alpha: float, n_max: int = 8) -> bool:
    """Whether some ``n <= n_max`` has bunching product below ``2^{αn}``."""
    for n in range(1, n_max + 1):
        lhs = math.log(fiber_bunching_product(A, n))
        if lhs < alpha * n * math.log(2.0) * (1 - 1e-12):
            return True
    return False


@dataclass(frozen=True)
class InducedEstimate:
    """Exponent estimates through returns to Z, in nats per step."""

    first_return: float
    first_return_stderr: float
    second_return_bound: float
    second_return_stderr: float
    mean_return: float
    mean_return_stderr: float
    samples: int
    discarded: int

    @property
    def discard_rate(self) -> float:
        return self.discarded / max(self.samples, 1)


def lyapunov_induced(A: CocycleHandle, p: float, N: int, samples: int, seed: int,
                     batch: int = 256, cap: int | None = None) -> InducedEstimate:
    """Estimate λ_+ from excursions to Z.

    ``first_return`` is ``μ(Z)`` times the Birkhoff rate of the induced cocycle
    along the sampled chain of excursions (batch means give the error);
    ``second_return_bound`` is ``μ(Z)/2 · E log ||A^{τ_Z^{(2)}}||``.
    """
    muz = measure_Z(p, N)
    ex = sample_excursions(p, N, samples + 1, seed, batch=batch, cap=cap)
    x = OrbitBuffer(p, seed, key=(9,), segments=[(0, ex.stream)])
    f = A.factors(x, 0, int(ex.starts[-1]))
    starts = ex.starts
    keep = ~(ex.truncated[:-1] | ex.truncated[1:])
    two = np.array([f.product(int(starts[i]), int(starts[i + 2])).log_norm()
                    for i in range(samples) if keep[i]])
    # Birkhoff rate over consecutive blocks of excursions
    nb = max(2, min(32, samples // 8))
    edges = np.linspace(0, samples, nb + 1).astype(int)
    rates = []
    for a, b in zip(edges[:-1], edges[1:]):
        lo, hi = int(starts[a]), int(starts[b])
        rates.append(f.product(lo, hi).log_norm() / (b - a))
    rates = np.asarray(rates)
    lengths = ex.lengths[:samples]
    return InducedEstimate(
        first_return=float(muz * rates.mean()),
        first_return_stderr=float(muz * rates.std(ddof=1) / math.sqrt(len(rates))),
        second_return_bound=float(muz * two.mean() / 2),
        second_return_stderr=float(muz * two.std(ddof=1) / 2 / math.sqrt(len(two))),
        mean_return=float(lengths.mean()),
        mean_return_stderr=float(lengths.std(ddof=1) / math.sqrt(len(lengths))),
        samples=samples,
        discarded=int((~keep).sum()),
    )
