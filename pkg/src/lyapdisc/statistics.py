"""Return-time tails, Chernoff, Kac and Wald checks on sampled excursions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .shift import measure_Z, philox, sample_excursions


@dataclass(frozen=True)
class MeanCheck:
    """A sample mean against a target value."""

    mean: float
    stderr: float
    target: float

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == self.target else math.inf
        return (self.mean - self.target) / self.stderr

    def passes(self, k: float = 3.0) -> bool:
        return abs(self.z) <= k

    @classmethod
    def of(cls, values: np.ndarray, target: float) -> "MeanCheck":
        v = np.asarray(values, dtype=np.float64)
        return cls(float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))), float(target))


DEFAULT_A_GRID = (1.0, 1.5, 2.0, 2.5, 3.0)


@dataclass
class TailStats:
    p: float
    N: int
    samples: int
    a_grid: tuple[float, ...]
    tail: np.ndarray
    eta_hat: float
    kac: MeanCheck
    taus: np.ndarray = field(repr=False)

    def bound_holds(self, a: float, eta: float | None = None) -> bool:
        eta = self.eta_hat if eta is None else eta
        return self.tail_at(a) <= eta * math.exp(-a)

    def tail_at(self, a: float) -> float:
        return float(np.mean(self.taus > a / measure_Z(self.p, self.N)))


def return_tail_stats(p: float, N: int, samples: int, seed: int,
                      a_grid: Sequence[float] = DEFAULT_A_GRID) -> TailStats:
    """Empirical ``a -> μ_Z(τ_Z > a μ(Z)^{-1})`` and ``η̂ = max tail(a) e^a``."""
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    ex = sample_excursions(p, N, samples, seed)
    taus = ex.lengths
    inv = 1.0 / measure_Z(p, N)
    grid = tuple(float(a) for a in a_grid)
    tail = np.array([np.mean(taus > a * inv) for a in grid])
    eta = float(np.max(tail * np.exp(grid))) if grid else math.nan
    return TailStats(p, N, samples, grid, tail, eta, MeanCheck.of(taus, inv), taus)


@dataclass(frozen=True)
class ChernoffRow:
    n: int
    empirical: float
    stderr: float
    exact: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.empirical <= self.bound


def _deviates(k: np.ndarray, n: int, p: float, beta: float) -> np.ndarray:
    return np.abs(k - p * n) > beta * n


def binomial_deviation(n: int, p: float, beta: float) -> float:
    """Exact ``P(|S_n - pn| > βn)`` by summing the binomial law."""
    k = np.arange(n + 1)
    return float(stats.binom.pmf(k, n, p)[_deviates(k, n, p, beta)].sum())


def chernoff_check(p: float, beta: float, ns: Sequence[int], samples: int, seed: int) -> list[ChernoffRow]:
    if not 0 < beta < min(p, 1 - p):
        raise ValueError("β must lie in (0, min(p, 1-p))")
    rows = []
    for j, n in enumerate(ns):
        rng = philox(seed, (11, j))
        hits = np.zeros(samples, dtype=bool)
        done = 0
        # bit sums in chunks to bound memory
        step = max(1, (1 << 22) // n)
        while done < samples:
            m = min(step, samples - done)
            s = (rng.random((m, n)) < p).sum(axis=1)
            hits[done:done + m] = _deviates(s, n, p, beta)
            done += m
        f = float(hits.mean())
        rows.append(ChernoffRow(int(n), f, math.sqrt(max(f * (1 - f), 1e-300) / samples),
                                binomial_deviation(int(n), p, beta), math.exp(-n * beta * beta / 2)))
    return rows


@dataclass
class WaldReport:
    p: float
    N: int
    samples: int
    kac: MeanCheck
    T_mean: MeanCheck
    T_var: float
    T_var_target: float
    psi_mean: MeanCheck
    psi_sq: MeanCheck
    T_mean_kac: MeanCheck
    psi_sq_indep: MeanCheck
    chebyshev_empirical: float
    chebyshev_bound: float

    @property
    def chebyshev_holds(self) -> bool:
        return self.chebyshev_empirical <= self.chebyshev_bound


def wald_check(p: float, N: int, samples: int, seed: int) -> WaldReport:
    """Moments of ``T = 2S - τ + N`` and ``ψ = T - T∘f^τ`` over i.i.d. excursions.

    Consecutive excursions along a μ_Z orbit are independent, so ψ is formed
    from excursion pairs ``(i, i+1)``. Besides the targets derived with Wald's
    identities, ``T_mean_kac`` uses the exact value from Kac's formula and
    ``psi_sq_indep`` compares ``E ψ^2`` with twice the sample variance of T.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    ex = sample_excursions(p, N, samples + 1, seed)
    tau = ex.lengths.astype(np.float64)
    S = ex.ones().astype(np.float64)
    T = 2 * S - tau + N
    psi = T[:-1] - T[1:]
    inv = 1.0 / measure_Z(p, N)
    m = 2 * p - 1
    var_w = (1 - m * m) * (inv - N)
    var_k = float(np.var(T, ddof=1))
    a = inv ** 0.75
    T0, psi0 = T[:samples], psi[:samples]
    return WaldReport(
        p=p, N=N, samples=samples,
        kac=MeanCheck.of(tau[:samples], inv),
        T_mean=MeanCheck.of(T0, m * (inv - N)),
        T_var=var_k,
        T_var_target=var_w,
        psi_mean=MeanCheck.of(psi0, 0.0),
        psi_sq=MeanCheck.of(psi0 ** 2, 2 * var_w),
        T_mean_kac=MeanCheck.of(T0, m * inv + N),
        psi_sq_indep=MeanCheck.of(psi0 ** 2, 2 * var_k),
        chebyshev_empirical=float(np.mean(np.abs(psi0) > a)),
        chebyshev_bound=float(np.mean(psi0 ** 2) / a ** 2),
    )


def q_zeta_bounds(eta: float, sigma: float, zeta: float) -> tuple[float, float]:
    """Per-``μ(Z)^{-1}`` majorants of the long-return integral.

    Returns the bound in the form used to choose ζ and the value of the sum it
    abbreviates, ``ζ (2 - e^{-ζ}) e^{-ζ} / (1 - e^{-ζ})^2``, both times
    ``η log σ^2``.
    """
    q = math.exp(-zeta)
    base = eta * math.log(sigma ** 2)
    return base * q / (1 - q) ** 2, base * zeta * (2 - q) * q / (1 - q) ** 2


def q_zeta_empirical(taus: np.ndarray, p: float, N: int, sigma: float, zeta: float) -> MeanCheck:
    """``μ(Z) E[1{τ_Z > ζ μ(Z)^{-1}} τ_Z log σ^2]``, a majorant of the integral
    of ``log ||L^{τ_Z}||`` over the long returns when ``||L|| <= σ^2``."""
    muz = measure_Z(p, N)
    v = muz * np.where(taus > zeta / muz, taus, 0) * math.log(sigma ** 2)
    return MeanCheck.of(v, 0.0)
