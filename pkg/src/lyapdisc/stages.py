"""The sheared cocycles B_*, B, B_0, B_ℓ and L, evaluated along orbits.

Every modification of A is a shear attached to one position:

* a right R2 shear at each W-start (B_*),
* a left R1 shear at ``z + N - 1`` for each Z-start ``z`` (B),
* a left R2 shear at the last position of a good W-return block (B_0 for
  blocks that start a return to Z, stage ℓ for the others).

An :class:`Annotation` records these over a bit string that starts at a
Z-start. Shears of the last kind are solved left to right against the exact
vector they act on, so the kills they perform are exact in floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .cocycle import (CocycleHandle, Factors, ResolutionError, WindowCocycle, a_sigma,
                      shear_r1, shear_r2)
from .construction import (ConstructionParams, Ledger, holder_ledger, level_code,
                           sigma_partial)
from .shift import OrbitBuffer, pattern_starts, philox

LN2 = math.log(2.0)

# position codes
NONE, WSHEAR, R1KILL, ZKILL = 0, 1, 2, 3


class ConstructionError(RuntimeError):
    """A solved shear broke its smallness bound."""


@dataclass(frozen=True)
class Solve:
    """One solved R2 shear at the end of a block or tuple."""

    pos: int
    stage: int
    log_value: float
    log_bound: float
    block_len: int
    block_ones: int
    tuple_start: int
    tuple_len: int
    entry_ratio: float
    sign: float = 1.0

    @property
    def value(self) -> float:
        """The shear parameter (may underflow; compare logs instead)."""
        return self.sign * math.exp(self.log_value)

    @property
    def bound(self) -> float:
        return math.exp(self.log_bound)

    @property
    def ok(self) -> bool:
        return self.log_value < self.log_bound

    @property
    def family(self) -> str:
        return "B0" if self.stage == 0 else f"stage_{self.stage}"


def _ratio_bits(ones: np.ndarray, lengths: np.ndarray, p: float, beta: float) -> np.ndarray:
    return np.abs(ones - p * lengths) <= beta * lengths


@dataclass
class Annotation:
    """Shear data for positions ``0..end-1`` of ``bits``.

    ``bits[0]`` must be a Z-start (or, for stand-alone solves, a W-start whose
    left context is ignored) and ``end`` is the last complete W-start, or Z-start
    when ``to_z`` is set.
    """

    params: ConstructionParams
    bits: np.ndarray
    end: int
    code: np.ndarray
    stage: np.ndarray
    rs: np.ndarray
    kind: np.ndarray
    num: np.ndarray
    den: np.ndarray
    wstarts: np.ndarray
    zstarts: np.ndarray
    solves: list[Solve] = field(default_factory=list)

    @property
    def tab(self) -> np.ndarray:
        return a_sigma(self.params.sigma).table

    def violations(self) -> list[Solve]:
        return [s for s in self.solves if not s.ok]

    def factors(self, level="L", t: float = 1.0, lo: int = 0, hi: int | None = None) -> Factors:
        """Steps for positions ``lo..hi-1`` of the cocycle at ``level``."""
        hi = self.end if hi is None else hi
        if not 0 <= lo <= hi <= self.end:
            raise ResolutionError(f"range [{lo}, {hi}) outside annotated [0, {self.end})")
        c = level_code(level, self.params.omega)
        sl = slice(lo, hi)
        sym = self.bits[sl]
        rs = self.rs[sl] if c >= 1 else np.zeros(hi - lo)
        kind = self.kind[sl].copy()
        keep = np.zeros(hi - lo, dtype=bool)
        if c >= 2:
            keep |= self.code[sl] == R1KILL
        if c >= 3:
            zk = self.code[sl] == ZKILL
            keep |= zk & (self.stage[sl] <= c - 3)
        kind[~keep] = 0
        return Factors(self.tab, sym, rs, kind, self.num[sl], self.den[sl], float(t))


def _r1_ratio(params: ConstructionParams) -> tuple[float, float]:
    """Raw image of e1 after N steps from a Z-start, before the R1 shear."""
    N = params.N
    tab = a_sigma(params.sigma).table
    sym = np.zeros(N, dtype=np.uint8)
    sym[0] = 1
    rs = np.zeros(N)
    rs[0] = params.s
    z = np.zeros(N)
    a, b, _ = K.push(tab, sym, rs, np.zeros(N, dtype=np.int8), z, np.ones(N), 1.0, 0, N, 1.0, 0.0)
    return a, b


def _stage_of(length: int, N: int, omega: int) -> int:
    for ell in range(1, omega):
        if length < N ** (ell + 2):
            return ell
    return omega


def annotate(bits: np.ndarray, params: ConstructionParams, to_z: bool = True,
             first_is_boundary: bool = True) -> Annotation:
    """Place and solve every shear over ``bits``.

    With ``to_z`` the annotated range ends at the last complete Z-start, so
    it covers whole excursions; otherwise it ends at the last complete
    W-start. Tuples never reach left of ``bits[0]`` or across a Z-block.
    """
    P = params
    if P.N is None:
        raise ValueError("params need N")
    N, gN, om = P.N, P.gN, P.omega
    if N < 2:
        raise ValueError("the construction needs N >= 2")
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    n = len(bits)
    ws = pattern_starts(bits, gN)
    zs = pattern_starts(bits, N)
    if to_z:
        if len(zs) == 0 or zs[0] != 0:
            raise ResolutionError("annotation must start at a Z-start")
        end = int(zs[-1])
    else:
        if len(ws) == 0 or ws[0] != 0:
            raise ResolutionError("annotation must start at a W-start")
        end = int(ws[-1])
    code = np.zeros(n, dtype=np.int8)
    stage = np.full(n, -1, dtype=np.int8)
    rs = np.zeros(n)
    kind = np.zeros(n, dtype=np.int8)
    num = np.zeros(n)
    den = np.ones(n)
    rs[ws] = P.s
    code[ws] = WSHEAR
    r1 = zs + N - 1
    r1 = r1[r1 < n]
    w1, w2 = _r1_ratio(P)
    code[r1] = R1KILL
    kind[r1] = 1
    num[r1] = w1
    den[r1] = w2

    ann = Annotation(P, bits, end, code, stage, rs, kind, num, den, ws, zs)
    tab = ann.tab
    cs = np.concatenate(([0], np.cumsum(bits, dtype=np.int64)))
    wsin = ws[ws <= end]
    if len(wsin) < 2:
        return ann
    b_lo, b_hi = wsin[:-1], wsin[1:]
    lengths = b_hi - b_lo
    ones = cs[b_hi] - cs[b_lo]
    zset = np.zeros(n, dtype=bool)
    zset[zs] = True
    is_z = zset[b_lo]
    g1 = ((lengths >= N * N) & (lengths <= P.cutoff)
          & _ratio_bits(ones, lengths, P.p, P.beta))
    # index of the first block of the current segment, per block
    seg = np.maximum.accumulate(np.where(is_z, np.arange(len(b_lo)), 0))
    if not first_is_boundary:
        seg[:] = 0
    eps = P.epsilon
    for i in np.flatnonzero(g1):
        L_i, S_i = int(lengths[i]), int(ones[i])
        term = int(b_hi[i]) - 1
        if is_z[i]:
            st, k, start = 0, 1, int(b_lo[i])
            v = (0.0, 1.0)
            log_bound = math.log(eps) - P.alpha * (L_i + gN) * LN2
            ratio = math.nan
        else:
            first = int(seg[i]) + (1 if is_z[seg[i]] else 0)
            kmax = min(om, i - first + 1)
            k = 0
            for kk in range(kmax, 0, -1):
                ok = lengths[i] >= N ** (kk + 1)
                for j in range(1, kk):
                    ok = ok and lengths[i - kk + j] < N ** (j + 1)
                if ok:
                    k = kk
                    break
            if k == 0:
                continue
            st = _stage_of(L_i, N, om)
            start = int(b_lo[i - k + 1])
            if k > 1:
                a0, b0, _ = K.push(tab, bits, rs, kind, num, den, 1.0, start, int(b_lo[i]), 1.0, 0.0)
                ratio = b0 / a0
            else:
                ratio = 0.0
            v = (1.0, 0.0)
            log_bound = math.log(eps) - P.alpha * (sigma_partial(N, st) + L_i + gN) * LN2
        a, b, _ = K.push(tab, bits, rs, kind, num, den, 1.0, start, term + 1, *v)
        ma, la, mb, lb = K.push_log(tab, bits, rs, kind, num, den, 1.0, start, term + 1, *v)
        if ma == 0.0:
            log_d = math.inf
        elif mb == 0.0:
            log_d = -math.inf
        else:
            log_d = lb - la
        sign = -math.copysign(1.0, mb) * math.copysign(1.0, ma)
        solve = Solve(term, st, log_d, log_bound, L_i, S_i, start, k, ratio, sign)
        ann.solves.append(solve)
        if not solve.ok and P.strict:
            raise ConstructionError(
                f"{solve.family} shear log|d|={log_d:.4g} at position {term} breaks its bound "
                f"log={log_bound:.4g} "
                f"(block length {L_i}, ones {S_i})")
        code[term] = ZKILL
        stage[term] = st
        kind[term] = 2
        num[term] = -b
        den[term] = a
    return ann


class StageCocycle(CocycleHandle):
    """One stage of the construction as a cocycle over the full shift.

    Evaluation resolves the excursion(s) around the requested positions: from
    the last Z-start at or before the first position to the first Z-start at or
    after the end, then annotates that stretch.
    """

    window = None

    def __init__(self, params: ConstructionParams, level="L", t: float = 1.0,
                 cap: int | None = None):
        if params.N is None:
            raise ValueError("params need N")
        self.params = params
        self.level = level
        self.code = level_code(level, params.omega)
        self.t = float(t)
        self.cap = cap if cap is not None else max(1 << 20, int(200 / params.muZ))

    def at(self, t: float) -> "StageCocycle":
        return StageCocycle(self.params, self.level, t, self.cap)

    @property
    def ledger(self) -> Ledger:
        return holder_ledger(self.params, self.level, self.t)

    def window_table(self) -> WindowCocycle:
        """B_* or B (or A) as a fixed-window cocycle, for exact Hölder norms."""
        if self.code > 2:
            raise ValueError("only A, B_* and B have a fixed dependence window")
        P = self.params
        N, gN = P.N, P.gN
        m1 = N - 1 if self.code == 2 else 0
        m2 = max(gN, 1) if self.code == 2 else gN
        w = m1 + m2 + 1
        words = np.arange(2 ** w, dtype=np.int64)
        bits = ((words[:, None] >> np.arange(w)) & 1).astype(np.uint8)
        base = a_sigma(P.sigma).table[bits[:, m1]]
        out = base.copy()
        if self.code >= 1:
            in_w = (bits[:, m1] == 1) & ~bits[:, m1 + 1:m1 + gN + 1].any(axis=1)
            out[in_w] = out[in_w] @ shear_r2(self.t * P.s)
        if self.code == 2:
            # the step N-1 after a Z-start: 1 at -(N-1), zeros on -(N-2)..+1
            at_r1 = (bits[:, 0] == 1) & ~bits[:, 1:m1 + 2].any(axis=1)
            out[at_r1] = shear_r1(-self.t * P.theta) @ out[at_r1]
        return WindowCocycle(out, m1, m2, name=str(self.level))

    def _find_z(self, x: OrbitBuffer, pos: int, left: bool) -> int:
        N = self.params.N
        span = 1024
        while True:
            span_c = min(span, self.cap)
            if left:
                w = x.view(pos - span_c, pos + N + 1)
                z = pattern_starts(w, N)
                z = z[z <= span_c]
                if len(z):
                    return pos - span_c + int(z[-1])
            else:
                w = x.view(pos, pos + span_c + N + 1)
                z = pattern_starts(w, N)
                if len(z):
                    return pos + int(z[0])
            if span >= self.cap:
                side = "left" if left else "right"
                raise ResolutionError(
                    f"no Z-start within {self.cap} positions to the {side} of {pos}; "
                    f"extend the buffer by more than {self.cap}", needed=self.cap)
            span *= 4

    def consulted(self, x: OrbitBuffer, pos: int) -> tuple[int, int]:
        z0 = self._find_z(x, pos, left=True)
        z1 = self._find_z(x, pos + 1, left=False)
        return z0, z1 + self.params.N

    def annotation(self, x: OrbitBuffer, lo: int, hi: int) -> tuple[Annotation, int]:
        z0 = self._find_z(x, lo, left=True)
        z1 = self._find_z(x, hi, left=False)
        bits = x.window(z0, z1 + self.params.N + 1)
        return annotate(bits, self.params), z0

    def factors(self, x: OrbitBuffer, lo: int, hi: int) -> Factors:
        if self.code == 0:
            return Factors(a_sigma(self.params.sigma).table, x.window(lo, hi))
        ann, z0 = self.annotation(x, lo, hi)
        return ann.factors(self.level, self.t, lo - z0, hi - z0)


def build_B_star(params: ConstructionParams) -> StageCocycle:
    return StageCocycle(params, "B*")


def build_B(params: ConstructionParams) -> StageCocycle:
    return StageCocycle(params, "B")


def build_stage(params: ConstructionParams, ell) -> StageCocycle:
    return StageCocycle(params, ell)


def build_L(params: ConstructionParams) -> StageCocycle:
    return StageCocycle(params, "L")


def homotopy(L: StageCocycle, t: float) -> StageCocycle:
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return L.at(t)


def r1_kill(a: float, b: float) -> float:
    """θ with ``R1^{-θ} (a, b)`` parallel to e2."""
    if b == 0:
        raise ConstructionError("vector has no e2 component")
    return a / b


def r2_kill(a: float, b: float) -> float:
    """δ with ``R2^{δ} (a, b)`` parallel to e1."""
    if a == 0:
        raise ConstructionError("vector has no e1 component")
    return -b / a


def solve_theta(params: ConstructionParams) -> float:
    """θ with ``R1^{-θ} B_*^N(x) e1`` parallel to e2 on Z, from the pushed vector."""
    return r1_kill(*_r1_ratio(params))


def _with_trailing(word, gN: int) -> np.ndarray:
    tail = np.zeros(gN + 1, dtype=np.uint8)
    tail[0] = 1
    return np.concatenate((np.asarray(word, dtype=np.uint8), tail))


def _word(v) -> np.ndarray:
    return np.asarray(getattr(v, "bits", v), dtype=np.uint8)


def solve_delta_v(v, params: ConstructionParams) -> Solve:
    """The B_0 shear for a good block (word or ReturnBlock) that starts with
    the Z pattern."""
    P = params
    w = _word(v)
    if not (w[0] == 1 and not w[1:P.N + 1].any()):
        raise ValueError("block must begin with the Z pattern")
    ann = annotate(_with_trailing(w, P.gN), P, to_z=False)
    hit = [s for s in ann.solves if s.pos == len(w) - 1]
    if not hit:
        raise ValueError("block is not in 𝒢_1")
    return hit[0]


def log_delta_v_closed_form(params: ConstructionParams, length: int, ones: int) -> float:
    """``log |δ(v)| = log s + (2|v| - 4 S(v)) log σ``."""
    P = params
    return math.log(P.s) + (2 * length - 4 * ones) * math.log(P.sigma)


def solve_delta_tuple(words, params: ConstructionParams) -> Solve:
    """The stage shear for a tuple of blocks none of which starts with Z.

    Shears at earlier blocks of the tuple are solved inside the tuple too.
    """
    P = params
    joined = np.concatenate([_word(w) for w in words])
    ann = annotate(_with_trailing(joined, P.gN), P, to_z=False)
    hit = [s for s in ann.solves if s.pos == len(joined) - 1]
    if not hit or hit[0].tuple_len != len(words):
        raise ValueError("tuple is not a maximal member of 𝒢_k")
    return hit[0]


@dataclass
class InvariantReport:
    """Worst cases over sampled μ_Z-excursions of the products of L_t.

    ``e2_slope`` is the fitted coefficient ``k`` in
    ``log ||L^{τ_Z} e2|| ≈ c + k (2S - τ_Z) log σ`` over good excursions.
    ``witness`` holds the excursion with the largest defect as packed hex bits.
    """

    t: float
    excursions: int
    good: int
    skipped: int
    max_sin_e1: float
    max_sin_e2_good: float
    max_e2_drift: float
    max_det_defect: float
    max_logmag_error: float
    e2_slope: float
    bound_violations: int
    sin_tol: float = 1e-8
    det_tol: float = 1e-10
    witness: dict | None = None

    @property
    def good_rate(self) -> float:
        return self.good / self.excursions if self.excursions else math.nan

    def passes(self) -> bool:
        if self.max_det_defect > self.det_tol:
            return False
        if self.t == 0.0:
            return self.max_e2_drift == 0.0
        if self.t == 1.0:
            return self.max_sin_e1 <= self.sin_tol and self.max_sin_e2_good <= self.sin_tol
        return True

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _sin_e2(a: float, b: float) -> float:
    n = math.hypot(a, b)
    return abs(a) / n if n else math.nan


def _witness(bits: np.ndarray, seed: int, index: int, what: str, value: float) -> dict:
    return {"seed": seed, "excursion": index, "defect": what, "value": value,
            "length": int(len(bits)), "bits_hex": np.packbits(bits).tobytes().hex()}


def check_invariants(params: ConstructionParams, count: int, seed: int, t: float = 1.0,
                     batch: int = 16, sin_tol: float = 1e-8,
                     det_tol: float = 1e-10) -> InvariantReport:
    """Directions, determinants and the magnitude identity along excursions.

    Determinants are checked for every step matrix. At ``t = 1`` every ``L^{τ_Z} e1`` must be parallel to e2 with
    ``log ||L^{τ_Z} e1|| = log ε - γαN log 2 + (τ_Z - 2S) log σ``, and on the
    good set ``L^{τ_Z} e2`` must be parallel to e1. At ``t = 0`` e2 must stay
    on its own line. Truncated excursions are skipped and counted.
    """
    from .returns import good_set_membership, iter_parses
    from .shift import iter_excursions

    P = params
    g = P.grammar
    lsg = math.log(P.sigma)
    base = math.log(P.epsilon) - P.gamma * P.alpha * P.N * LN2
    n = good = skipped = 0
    s1 = s2 = drift = dd = le = 0.0
    viol = 0
    xs, ys = [], []
    worst, witness = 0.0, None
    for ex in iter_excursions(P.p, P.N, count, seed, batch=batch):
        z0 = int(ex.starts[0])
        ann = annotate(ex.stream[z0:int(ex.starts[-1]) + P.N + 1], P)
        viol += len(ann.violations())
        f = ann.factors("L", t)
        m = step_matrices(ann, "L", t)
        step_det = np.abs(m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0] - 1.0)
        tr = ex.truncated
        for i, parse in enumerate(iter_parses(ex, g)):
            if tr[i]:
                skipped += 1
                continue
            lo, hi = int(ex.starts[i]) - z0, int(ex.starts[i + 1]) - z0
            a1, b1, e1 = f.push_exp((1.0, 0.0), lo, hi)
            a2, b2, e2 = f.push_exp((0.0, 1.0), lo, hi)
            tau = hi - lo
            sin1 = _sin_e2(a1, b1)
            det = float(step_det[lo:hi].max())
            drift = max(drift, _sin_e2(a2, b2))
            if t == 1.0:
                want = base + (tau - 2 * parse.S) * lsg
                le = max(le, abs(e1 * LN2 + math.log(math.hypot(a1, b1)) - want))
            sin2 = 0.0
            if good_set_membership(parse, g, with_partition=False).verdict:
                good += 1
                sin2 = abs(b2) / math.hypot(a2, b2)
                s2 = max(s2, sin2)
                xs.append((2 * parse.S - tau) * lsg)
                ys.append(e2 * LN2 + math.log(math.hypot(a2, b2)))
            s1 = max(s1, sin1)
            dd = max(dd, det)
            bad = max(sin1 / sin_tol, sin2 / sin_tol, det / det_tol) if t == 1.0 else det / det_tol
            if bad > 1 and bad > worst:
                worst = bad
                what = "det" if bad == det / det_tol else ("sin_e1" if bad == sin1 / sin_tol else "sin_e2")
                witness = _witness(ex.stream[z0 + lo:z0 + hi], seed, n, what, bad)
            n += 1
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(xs) >= 2 and np.ptp(xs) > 0 else math.nan
    return InvariantReport(float(t), n, good, skipped, s1, s2, drift, dd, le, slope, viol,
                           sin_tol, det_tol, witness)


@dataclass
class TargetedHolder:
    """Sampled Hölder quotients of ``A - L`` at modified positions."""

    sup: float
    semi: float
    samples: int
    quotients: np.ndarray = field(repr=False)
    hits: int = 0

    def within(self, sup_bound: float, semi_bound: float) -> bool:
        return self.sup <= sup_bound and self.semi <= semi_bound


def _diff_at(L: StageCocycle, x: OrbitBuffer, pos: int) -> np.ndarray:
    A = a_sigma(L.params.sigma).table[x[pos]]
    return A - L.evaluate(x, pos)


def holder_sampled_L(L: StageCocycle, alpha: float, samples: int, radius: int,
                     seed: int) -> TargetedHolder:
    """Lower bound on ``||A - L||_α`` from pairs centred on modified steps.

    Each sample draws an orbit, picks uniformly a step inside the excursion
    through 0 where ``L`` differs from ``A``, and flips one coordinate at
    distance ``k`` from it. Pairs at unmodified steps contribute only when a
    flip creates a modification, so centring on modified steps is where large
    quotients live.
    """
    from .cocycle import spectral_norm

    P = L.params
    rng = philox(seed, (13,))
    ks = rng.integers(0, radius + 1, size=samples)
    sides = rng.integers(0, 2, size=samples)
    picks = rng.random(samples)
    sup = semi = 0.0
    q = np.zeros(samples)
    hits = 0
    for i in range(samples):
        x = OrbitBuffer(P.p, seed, key=(14, i))
        ann, z0 = L.annotation(x, 0, 1)
        mod = np.flatnonzero(ann.code[:ann.end] != NONE)
        if len(mod) == 0:
            continue
        pos = z0 + int(mod[min(int(picks[i] * len(mod)), len(mod) - 1)])
        k = int(ks[i])
        flip = pos + (k if (sides[i] or k == 0) else -k)
        y = OrbitBuffer(P.p, seed, key=(14, i), fixed={flip: 1 - x[flip]})
        dx = _diff_at(L, x, pos)
        dy = _diff_at(L, y, pos)
        sup = max(sup, spectral_norm(dx), spectral_norm(dy))
        q[i] = spectral_norm(dx - dy) * 2.0 ** (alpha * k)
        hits += q[i] > 0
        semi = max(semi, q[i])
    return TargetedHolder(sup, semi, samples, q, hits)


def step_matrices(ann: Annotation, level="L", t: float = 1.0) -> np.ndarray:
    """Every step matrix of ``level`` over the annotated range, shape (n, 2, 2)."""
    f = ann.factors(level, t)
    n = len(f)
    out = f.tab[f.sym].copy()
    s = f.t * f.rs
    # right R2 shear: column 0 += s * column 1
    out[:, :, 0] += s[:, None] * out[:, :, 1]
    tn = f.t * f.num
    r = np.divide(tn, f.den, out=np.zeros(n), where=tn != 0)
    k1 = (f.kind == 1) & (tn != 0)
    k2 = (f.kind == 2) & (tn != 0)
    out[k1, 0, :] -= r[k1, None] * out[k1, 1, :]
    out[k2, 1, :] += r[k2, None] * out[k2, 0, :]
    return out


@dataclass
class ChainReport:
    """Comparison of consecutive stages step by step along one orbit."""

    steps: int
    changed: dict
    expected: dict
    shape_ok: dict
    max_det_defect: float

    @property
    def ok(self) -> bool:
        return all(self.changed[k] == self.expected[k] and self.shape_ok[k] for k in self.changed)


def _levels(omega: int) -> list:
    return ["A", "B*", "B", "B0"] + list(range(1, omega + 1))


def stage_chain_check(params: ConstructionParams, length: int, seed: int,
                      tol: float = 1e-12) -> ChainReport:
    """Each stage differs from the previous only where its own shears sit.

    B_* differs from A by right R2 shears on W, B from B_* by left R1 shears,
    and B_0, B_1, ... each by left R2 shears at their own terminals.
    """
    P = params
    x = OrbitBuffer(P.p, seed, key=(15,), chunk=1 << 16)
    L = StageCocycle(P)
    z0 = L._find_z(x, 0, left=False)
    z1 = L._find_z(x, z0 + length, left=True)
    if z1 <= z0:
        z1 = L._find_z(x, z0 + 1, left=False)
    ann = annotate(x.window(z0, z1 + P.N + 1), P)
    levels = _levels(P.omega)
    mats = [step_matrices(ann, lv) for lv in levels]
    changed, expected, shape = {}, {}, {}
    dd = 0.0
    for m in mats:
        d = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
        dd = max(dd, float(np.max(np.abs(d - 1.0))) if len(d) else 0.0)
    for j in range(1, len(levels)):
        lo, hi = mats[j - 1], mats[j]
        diff = np.any(lo != hi, axis=(1, 2))
        name = str(levels[j])
        if j == 1:
            want = ann.code == WSHEAR
            q = np.linalg.solve(lo, hi)  # lo^{-1} hi: right factor
            kind_ok = lambda m: np.all(np.abs(m[:, 0, 1]) <= tol)
        elif j == 2:
            want = ann.code == R1KILL
            q = hi @ np.linalg.inv(lo)
            kind_ok = lambda m: np.all(np.abs(m[:, 1, 0]) <= tol)
        else:
            want = (ann.code == ZKILL) & (ann.stage == j - 3)
            q = hi @ np.linalg.inv(lo)
            kind_ok = lambda m: np.all(np.abs(m[:, 0, 1]) <= tol)
        want = want[:ann.end]
        changed[name] = int(diff.sum())
        expected[name] = int((want & diff).sum())
        qd = q[diff]
        shape[name] = bool(np.all(diff <= want) and kind_ok(qd)
                           and np.all(np.abs(qd[:, 0, 0] - 1) <= tol)
                           and np.all(np.abs(qd[:, 1, 1] - 1) <= tol)) if len(qd) else bool(np.all(diff <= want))
    return ChainReport(ann.end, changed, expected, shape, dd)
