"""Parameters of the perturbation, feasibility of N and the Hölder ledger."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

from .returns import BlockGrammar
from .shift import measure_Z

LN2 = math.log(2.0)


class HypothesisViolated(ValueError):
    """The input violates σ^{4p-2} ≥ 2^α or another precondition."""


class InfeasibleError(RuntimeError):
    def __init__(self, message: str, report: "FeasibilityReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class ConstructionParams:
    sigma: float
    p: float
    alpha: float
    kappa: float
    epsilon: float
    eta_hat: float
    q: int
    omega: int
    beta: float
    zeta: float
    N: int | None = None
    sigma_input: float | None = None
    strict: bool = True

    @property
    def gamma(self) -> float:
        return 1.0 / self.q

    @property
    def gN(self) -> int:
        if self.N is None:
            raise ValueError("N not chosen yet")
        if self.N % self.q:
            raise ValueError(f"γN = {self.N}/{self.q} is not an integer")
        return self.N // self.q

    @property
    def xi(self) -> float:
        return self.sigma ** (-4 * self.p + 2 + 4 * self.beta) * 2.0 ** self.alpha

    @property
    def muZ(self) -> float:
        return measure_Z(self.p, self.N)

    @property
    def muW(self) -> float:
        return self.p * (1 - self.p) ** self.gN

    @property
    def cutoff(self) -> int:
        return int(math.floor(self.zeta / self.muZ))

    @property
    def s(self) -> float:
        """Parameter of the R2 shear placed on W."""
        return self.epsilon * 2.0 ** (-self.gamma * self.alpha * self.N)

    @property
    def theta(self) -> float:
        return theta_closed_form(self.sigma, self.alpha, self.gamma, self.epsilon, self.N)

    @property
    def sigma_bumped(self) -> bool:
        return self.sigma_input is not None and self.sigma_input != self.sigma

    @property
    def grammar(self) -> BlockGrammar:
        return BlockGrammar(self.p, self.N, self.gN, self.beta, self.cutoff, self.omega)

    def with_N(self, N: int, strict: bool | None = None) -> "ConstructionParams":
        return replace(self, N=int(N), strict=self.strict if strict is None else strict)

    def with_epsilon(self, epsilon: float) -> "ConstructionParams":
        return replace(self, epsilon=float(epsilon))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(gamma=self.gamma, xi=self.xi, sigma_bumped=self.sigma_bumped)
        if self.N is not None:
            d.update(gN=self.gN, s=self.s, theta=self.theta, muZ=self.muZ,
                     muW=self.muW, cutoff=self.cutoff)
        return d


def theta_closed_form(sigma: float, alpha: float, gamma: float, epsilon: float, N: int) -> float:
    return sigma ** (4 - 2 * N) * 2.0 ** (gamma * alpha * N) / epsilon


def beta_rule(sigma: float, p: float, alpha: float) -> float:
    """Half of the admissible slack: σ^{4p-2-4β} > 2^α with room to spare."""
    return ((4 * p - 2) - alpha * LN2 / math.log(sigma)) / 8


def zeta_rule(eta_hat: float, sigma: float, kappa: float, step: float = 0.5) -> float:
    """Smallest multiple of ``step`` above 1 with η̂ log σ² e^{-ζ}/(1-e^{-ζ})² < κ/100."""
    c = eta_hat * math.log(sigma ** 2)
    k = int(math.floor(1.0 / step)) + 1
    while True:
        z = k * step
        q = math.exp(-z)
        if c * q / (1 - q) ** 2 < kappa / 100:
            return z
        k += 1


def hypothesis_margin(sigma: float, p: float, alpha: float) -> float:
    """``(4p-2) log σ - α log 2``; the main hypothesis asks for ``>= 0``."""
    return (4 * p - 2) * math.log(sigma) - alpha * LN2


def select_parameters(sigma: float, p: float, alpha: float, kappa: float, epsilon: float,
                      eta_hat: float = 1.0, sigma_budget: float = 1e-3, q_max: int = 64,
                      tol: float = 1e-12) -> ConstructionParams:
    """Fix γ, ω, β, ζ for the given data; N is chosen by :func:`feasible_N`.

    On the boundary ``σ^{4p-2} = 2^α`` σ is raised by ``sigma_budget``.
    """
    if not sigma > 1:
        raise HypothesisViolated(f"σ must exceed 1 (got {sigma})")
    if not 0.5 < p < 1:
        raise HypothesisViolated(f"p must lie in (1/2, 1) (got {p})")
    if not alpha > 0:
        raise HypothesisViolated(f"α must be positive (got {alpha})")
    if not epsilon > 0:
        raise HypothesisViolated(f"ε must be positive (got {epsilon})")
    m = hypothesis_margin(sigma, p, alpha)
    if m < -tol:
        raise HypothesisViolated(
            f"σ^(4p-2) ≥ 2^α fails: (4p-2)·log σ = {(4 * p - 2) * math.log(sigma):.6g} "
            f"< α·log 2 = {alpha * LN2:.6g}")
    sigma_input = sigma
    if m <= tol:
        sigma = sigma + sigma_budget
    top = (2 * p - 1) * math.log(sigma)
    if not 0 < kappa <= top * (1 + 1e-12):
        raise HypothesisViolated(f"κ must lie in (0, (2p-1) log σ = {top:.6g}] (got {kappa})")
    q = next((q for q in range(1, q_max + 1)
              if 2 * math.log(sigma) > (1.0 / q + 1) * alpha * LN2), None)
    if q is None:
        raise InfeasibleError(f"no γ = 1/q with q ≤ {q_max} satisfies σ² > 2^((γ+1)α)")
    beta = beta_rule(sigma, p, alpha)
    return ConstructionParams(sigma=sigma, p=p, alpha=alpha, kappa=kappa, epsilon=epsilon,
                              eta_hat=eta_hat, q=q, omega=q + 1, beta=beta,
                              zeta=zeta_rule(eta_hat, sigma, kappa), sigma_input=sigma_input)


def sigma_partial(N: int, ell: int) -> int:
    """``Σ_{j=1}^{ℓ-1} N^{j+1}``."""
    return sum(N ** (j + 1) for j in range(1, ell))


def log_r_max(params: ConstructionParams, ell: int) -> float:
    """Log of a bound on the entry ratio ``b/a`` at the last block of a stage-ℓ tuple."""
    S = sigma_partial(params.N, ell)
    if S == 0:
        return -math.inf
    l2 = 2 * math.log(params.sigma)
    # log((σ^{2S} - 1) / (σ² - 1))
    geo = S * l2 + math.log(-math.expm1(-S * l2)) - math.log(math.expm1(l2))
    return math.log(params.s + params.epsilon) + geo


def r_max(params: ConstructionParams, ell: int) -> float:
    lr = log_r_max(params, ell)
    return math.exp(lr) if lr < 709 else math.inf


def _log_add(x: float, y: float) -> float:
    if x == -math.inf:
        return y
    if y == -math.inf:
        return x
    return max(x, y) + math.log1p(math.exp(-abs(x - y)))


def has_non_z_blocks(params: ConstructionParams) -> bool:
    return params.gN < params.N


@dataclass
class FeasibilityReport:
    N: int | None
    margins: dict[int, dict[str, float]] = field(default_factory=dict)
    binding: str | None = None

    def ok_at(self, N: int) -> bool:
        return all(v > 0 for k, v in self.margins[N].items() if not k.startswith("info:"))


def margins(params: ConstructionParams) -> dict[str, float]:
    """Log-margins (positive means satisfied) of the inequalities at ``params.N``.

    Keys prefixed ``info:`` are reported but do not gate feasibility.
    """
    P = params
    N, a, sg = P.N, P.alpha, math.log(P.sigma)
    le = math.log(P.epsilon)
    out = {}
    # θ < ε 2^{-αN}
    out["theta"] = (le - a * N * LN2) - math.log(P.theta)
    # δ(v) ≤ ε 2^{-γαN} σ^{(-4p+2+4β)τ} < ε 2^{-α(τ+γN)} for τ ≥ N^2
    out["delta_v"] = -N * N * math.log(P.xi)
    base = (-4 * P.p + 2 + 4 * P.beta) * sg
    tau = N * N
    out["info:delta_v_no_alpha"] = -(tau + P.gN) * LN2 - (-P.gamma * a * N * LN2 + base * tau)
    # with γ = 1 every W-return block starts a return to Z: no tuple stages
    for ell in range(1, P.omega + 1 if has_non_z_blocks(P) else 1):
        key = f"tuple_{ell}"
        S = sigma_partial(N, ell)
        lhs = (_log_add(math.log(P.s), log_r_max(P, ell)) + N ** (ell + 1) * math.log(P.xi)
               + a * (S + P.gN) * LN2)
        out[key] = le - lhs
    out["sup_norm"] = 2 * sg - math.log(sup_norm_bound(P))
    return out


def sup_norm_bound(params: ConstructionParams) -> float:
    """Upper bound for ``sup ||L_t(x)||`` over all steps and ``t`` in [0, 1]."""
    P = params
    sg = P.sigma
    # A(1) R2^s, R1^{-θ} A(0), R2^d A(bit) with d within the solver bound
    d = P.epsilon * 2.0 ** (-P.alpha * (P.N * P.N + P.gN))
    return sg * (1 + max(P.s / sg ** 2, P.theta, d))


def feasible_N(params: ConstructionParams, N_min: int = 2, N_cap: int = 64) -> FeasibilityReport:
    """Smallest ``N >= N_min`` with ``γN`` integral and every margin positive."""
    rep = FeasibilityReport(None)
    start = max(N_min, 2)
    for N in range(start, N_cap + 1):
        if N % params.q:
            continue
        m = margins(params.with_N(N))
        rep.margins[N] = m
        if rep.ok_at(N):
            rep.N = N
            return rep
    last = max(rep.margins) if rep.margins else None
    if last is not None:
        worst = min((v, k) for k, v in rep.margins[last].items() if not k.startswith("info:"))
        rep.binding = worst[1]
    raise InfeasibleError(f"infeasible at cap N = {N_cap}; binding constraint: {rep.binding}", rep)


def choose_N(params: ConstructionParams, N: int | None = None, N_cap: int = 64) -> tuple[ConstructionParams, FeasibilityReport]:
    """Fix N: the smallest feasible one, or an override checked for feasibility.

    An infeasible override is honoured with ``strict=False`` so solver bound
    violations are recorded instead of raised.
    """
    if N is None:
        rep = feasible_N(params, N_cap=N_cap)
        return params.with_N(rep.N), rep
    if N < 2 or N % params.q:
        raise InfeasibleError(f"N = {N} must be at least 2 and a multiple of q = {params.q}")
    P = params.with_N(N)
    rep = FeasibilityReport(None, {N: margins(P)})
    if rep.ok_at(N):
        rep.N = N
        return P, rep
    rep.binding = min((v, k) for k, v in rep.margins[N].items() if not k.startswith("info:"))[1]
    return P.with_N(N, strict=False), rep


@dataclass
class Ledger:
    """Explicit bound on ``||A - L_t||_α``, one entry per modification family."""

    families: dict[str, tuple[float, float]]
    t: float
    epsilon: float
    omega: int

    @property
    def total(self) -> float:
        return sum(a + b for a, b in self.families.values())

    @property
    def sup_total(self) -> float:
        return sum(a for a, _ in self.families.values())

    @property
    def semi_total(self) -> float:
        return sum(b for _, b in self.families.values())

    @property
    def constant(self) -> float:
        """Largest single-family contribution per unit ε."""
        if not self.families or self.epsilon == 0:
            return 0.0
        return max(a + b for a, b in self.families.values()) / self.epsilon

    @property
    def within_budget(self) -> bool:
        return self.total <= (self.omega + 1) * self.constant * self.epsilon * (1 + 1e-12)

    def to_dict(self) -> dict:
        return {"families": {k: {"sup": a, "semi": b} for k, (a, b) in self.families.items()},
                "total": self.total, "constant": self.constant, "t": self.t,
                "within_budget": self.within_budget}


LEVELS = ("A", "B*", "B", "B0")


def level_code(level, omega: int) -> int:
    """Integer rank of a stage: A=0, B*=1, B=2, B0=3, stage ℓ=3+ℓ, L=3+ω."""
    if level == "L":
        return 3 + omega
    if isinstance(level, str):
        if level in LEVELS:
            return LEVELS.index(level)
        raise ValueError(f"unknown stage {level!r}")
    ell = int(level)
    if not 1 <= ell <= omega:
        raise ValueError(f"stage must lie in 1..{omega}")
    return 3 + ell


def holder_ledger(params: ConstructionParams, level="L", t: float = 1.0) -> Ledger:
    """Sum over modification families of sup and seminorm bounds, linear in t.

    Each family lives on cylinders whose defining window reaches ``R``
    coordinates from the modified position; a modification of size ``m`` there
    contributes at most ``m`` to the sup term and ``2 m 2^{αR}`` to the
    seminorm. For the shear families solved per block the per-block bounds are
    maximized over the block length, giving closed-form majorants.
    """
    P = params
    code = level_code(level, P.omega)
    sg, a, N, gN = P.sigma, P.alpha, P.N, P.gN
    fam: dict[str, tuple[float, float]] = {}
    if code >= 1:
        m = t * P.s / sg
        fam["B*"] = (m, m * 2.0 ** (a * gN))
    if code >= 2:
        m = t * P.theta * sg
        fam["B"] = (m, m * 2.0 ** (a * max(N - 1, 1)))
    if code >= 3:
        tmin = max(N * N, gN + 1, N + 1)
        R = max(tmin - 1, gN + 1)
        m = t * P.epsilon * sg * 2.0 ** (-P.gamma * a * N) * P.xi ** tmin * 2.0 ** (a * (R - tmin))
        fam["B0"] = (m, 2 * m)
    if has_non_z_blocks(P):
        for ell in range(1, min(code - 3, P.omega) + 1):
            S = sigma_partial(N, ell)
            lm = (math.log(sg) + _log_add(math.log(P.s), log_r_max(P, ell))
                  + N ** (ell + 1) * math.log(P.xi) + a * (S + gN) * LN2)
            m = t * (math.exp(lm) if lm < 709 else math.inf)
            fam[f"stage_{ell}"] = (m, 2 * m)
    return Ledger(fam, t, P.epsilon, P.omega)
