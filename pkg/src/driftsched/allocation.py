"""Training-resource allocation: policies, switch-time solvers, renewal
time-average evaluation, and numerical verification of the optimality
(switching-function) conditions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np
from scipy.integrate import quad

from .durations import DurationModel, Exponential
from .errors import DomainError, SolverFailure, UnsupportedPolicy
from .losses import ExpDecay, LossCurve

__all__ = [
    "BudgetSpec",
    "AllocationPolicy",
    "front_loading_switch",
    "back_loading_switch",
    "delayed_block",
    "time_average_loss",
    "cost_rate",
    "SignPattern",
    "PmpReport",
    "pmp_verify",
]

# Survival mass below this is folded into analytic tail terms.
TAIL_MASS = 1e-12
QUAD_ABS_TOL = 1e-10
BISECT_MAX_ITER = 200
# Absolute tolerance on the integral value when bisecting switch times.
BISECT_VALUE_TOL = 1e-10


@dataclass(frozen=True)
class BudgetSpec:
    """Cost-rate budget B, unit price sigma_e and maximum resource level M."""

    budget: float
    sigma_e: float = 1.0
    max_level: float = 20.0

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise DomainError(f"budget must be nonnegative, got {self.budget}")
        if not self.sigma_e > 0:
            raise DomainError(f"sigma_e must be positive, got {self.sigma_e}")
        if not self.max_level > 0:
            raise DomainError(f"max_level must be positive, got {self.max_level}")

    @property
    def binding(self) -> bool:
        return self.budget < self.max_level * self.sigma_e

    def progress_budget(self, d: DurationModel) -> float:
        """B1 = B * E[Y] / sigma_e, the per-cycle progress the budget buys."""
        return self.budget * d.mean() / self.sigma_e

    def switch_integral_target(self, d: DurationModel) -> float:
        """E[Y] * B / (M * sigma_e): the integrated-survival mass a single-switch
        policy at full level must cover to spend the budget exactly."""
        return d.mean() * self.budget / (self.max_level * self.sigma_e)


@dataclass(frozen=True)
class AllocationPolicy:
    """Piecewise-constant resource level e(t) with cumulative progress x(t).

    Segment i runs on [times[i], times[i+1]) at levels[i]; the last level
    extends to infinity.  times[0] must be 0.
    """

    times: tuple[float, ...]
    levels: tuple[float, ...]
    budget_slack: bool = False
    _cum: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        times = tuple(float(t) for t in self.times)
        levels = tuple(float(e) for e in self.levels)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "levels", levels)
        if not times or times[0] != 0.0:
            raise DomainError("policy times must start at 0")
        if len(times) != len(levels):
            raise DomainError("times and levels must have equal length")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DomainError("policy times must be strictly increasing")
        if any(e < 0 or math.isinf(e) for e in levels):
            raise DomainError("levels must be finite and nonnegative")
        cum = [0.0]
        for i in range(1, len(times)):
            cum.append(cum[-1] + levels[i - 1] * (times[i] - times[i - 1]))
        object.__setattr__(self, "_cum", tuple(cum))

    @classmethod
    def fixed(cls, level: float) -> "AllocationPolicy":
        return cls((0.0,), (level,))

    @classmethod
    def front_loading(cls, max_level: float, switch_time: float) -> "AllocationPolicy":
        if math.isinf(switch_time):
            return cls.fixed(max_level)
        if switch_time == 0.0:
            return cls.fixed(0.0)
        return cls((0.0, switch_time), (max_level, 0.0))

    @classmethod
    def back_loading(cls, max_level: float, switch_time: float) -> "AllocationPolicy":
        if math.isinf(switch_time):
            return cls.fixed(0.0)
        if switch_time == 0.0:
            return cls.fixed(max_level)
        return cls((0.0, switch_time), (0.0, max_level))

    @classmethod
    def block(
        cls, max_level: float, start: float, end: float, slack: bool = False
    ) -> "AllocationPolicy":
        if start == 0.0:
            pol = cls.front_loading(max_level, end)
        elif math.isinf(end):
            pol = cls((0.0, start), (0.0, max_level))
        else:
            pol = cls((0.0, start, end), (0.0, max_level, 0.0))
        return cls(pol.times, pol.levels, budget_slack=slack)

    @property
    def max_level(self) -> float:
        return max(self.levels)

    def level_at(self, t: float) -> float:
        if t < 0:
            raise DomainError(f"time must be nonnegative, got {t}")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.levels[i]

    def progress(self, t: float) -> float:
        """x(t) = integral of the level up to t."""
        if t < 0:
            raise DomainError(f"time must be nonnegative, got {t}")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self._cum[i] + self.levels[i] * (t - self.times[i])

    def segments(self) -> Iterator[tuple[float, float, float, float]]:
        """Yield (t0, t1, x(t0), level); the last t1 is inf."""
        for i, (t0, e) in enumerate(zip(self.times, self.levels)):
            t1 = self.times[i + 1] if i + 1 < len(self.times) else math.inf
            yield t0, t1, self._cum[i], e

    def convex_combination(self, other: "AllocationPolicy", lam: float) -> "AllocationPolicy":
        """Pointwise lam * self + (1 - lam) * other."""
        if not 0 <= lam <= 1:
            raise DomainError(f"lam must lie in [0, 1], got {lam}")
        times = sorted(set(self.times) | set(other.times))
        levels = tuple(
            lam * self.level_at(t) + (1.0 - lam) * other.level_at(t) for t in times
        )
        return AllocationPolicy(tuple(times), levels)


def _bisect_increasing(f, lo: float, hi: float, target: float, what: str) -> float:
    """Bisection for f(t) = target with f non-decreasing; stops when the value
    is within BISECT_VALUE_TOL and the bracket has collapsed."""
    f_lo, f_hi = f(lo), f(hi)
    if target < f_lo - BISECT_VALUE_TOL or target > f_hi + BISECT_VALUE_TOL:
        raise SolverFailure(f"{what}: target {target} outside bracket values [{f_lo}, {f_hi}]")
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:  # bracket collapsed to adjacent floats
            if abs(f(mid) - target) <= BISECT_VALUE_TOL:
                return mid
            raise SolverFailure(f"{what}: bracket collapsed before value tolerance met")
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, abs(hi)) and abs(f(0.5 * (lo + hi)) - target) <= BISECT_VALUE_TOL:
            return 0.5 * (lo + hi)
    raise SolverFailure(f"{what}: bisection exceeded {BISECT_MAX_ITER} iterations")


def _truncation_point(d: DurationModel) -> float:
    return d.quantile(1.0 - TAIL_MASS)


def front_loading_switch(d: DurationModel, budget: BudgetSpec) -> float:
    """Switch time t* of the full-then-idle policy that spends the budget
    exactly: integral of survival over [0, t*] equals E[Y]*B/(M*sigma_e).
    Returns inf when the budget is not binding."""
    if not budget.binding:
        return math.inf
    if budget.budget == 0.0:
        return 0.0
    target = budget.switch_integral_target(d)
    hi = _truncation_point(d)
    for _ in range(64):
        if d.integrated_survival(0.0, hi) >= target:
            break
        hi *= 2.0
    return _bisect_increasing(
        lambda t: d.integrated_survival(0.0, t), 0.0, hi, target, "front_loading_switch"
    )


def back_loading_switch(d: DurationModel, budget: BudgetSpec) -> float:
    """Switch time t* of the idle-then-full policy: tail integral of survival
    from t* equals E[Y]*B/(M*sigma_e).  Returns 0 when the budget is not
    binding and inf (never allocates) when the budget is zero."""
    if not budget.binding:
        return 0.0
    if budget.budget == 0.0:
        return math.inf
    target = budget.switch_integral_target(d)
    hi = _truncation_point(d)
    for _ in range(64):
        if d.integrated_survival(hi, math.inf) <= target:
            break
        hi *= 2.0
    # Tail integral decreases in t; bisect on its negation.
    return _bisect_increasing(
        lambda t: -d.integrated_survival(t, math.inf), 0.0, hi, -target, "back_loading_switch"
    )


def delayed_block(d: DurationModel, budget: BudgetSpec, z: float) -> AllocationPolicy:
    """Full allocation on [z, T(z)) with T(z) chosen to spend the budget; if the
    survival mass after z cannot absorb the budget, the block extends to
    infinity and the policy carries a budget_slack flag."""
    if z < 0:
        raise DomainError(f"delay must be nonnegative, got {z}")
    if budget.budget == 0.0:
        return AllocationPolicy.fixed(0.0)
    target = budget.switch_integral_target(d)
    available = d.integrated_survival(z, math.inf)
    tol = 1e-12 * max(1.0, target)
    if available <= target + tol:
        slack = available < target - tol
        return AllocationPolicy.block(budget.max_level, z, math.inf, slack=slack)
    hi = max(_truncation_point(d), z * 2.0, z + d.mean())
    end = _bisect_increasing(
        lambda t: d.integrated_survival(z, t), z, hi, target, "delayed_block"
    )
    return AllocationPolicy.block(budget.max_level, z, end)


def _segment_loss_expdecay_exponential(
    g: ExpDecay, d: Exponential, t0: float, t1: float, x0: float, e: float
) -> float:
    """Closed form of the survival-weighted loss integral on one affine-progress
    segment for exponential decay against an exponential duration."""
    lam = d.rate
    k = g.beta * e + lam
    front = g.alpha * math.exp(-g.beta * x0) * math.exp(-lam * t0)
    if math.isinf(t1):
        return front / k
    return front * -math.expm1(-k * (t1 - t0)) / k


def time_average_loss(
    policy: AllocationPolicy,
    g: LossCurve,
    d: DurationModel,
    use_closed_forms: bool = True,
) -> float:
    """Long-run time-average expected loss of the server-side model:
    (1/E[Y]) * integral of g(x(t)) * survival(t) over [0, inf).

    Idle segments contribute exactly via the integrated survival; active
    segments use the exponential-decay x exponential closed form when
    available, otherwise adaptive quadrature truncated at the 1 - 1e-12
    survival quantile with an analytic tail bound.  Integrable-singular
    curves with an initial idle segment yield the structured +inf objective.
    """
    diverging = getattr(g, "integrable_singularity", False)
    if diverging and policy.levels[0] == 0.0:
        return math.inf
    q = _truncation_point(d)
    total = 0.0
    for t0, t1, x0, e in policy.segments():
        if e == 0.0:
            gx = g.value(x0)
            if math.isinf(gx):
                return math.inf
            total += gx * d.integrated_survival(t0, t1)
            continue
        if use_closed_forms and isinstance(g, ExpDecay) and isinstance(d, Exponential):
            total += _segment_loss_expdecay_exponential(g, d, t0, t1, x0, e)
            continue
        a, b = t0, min(t1, q)
        if a < b:
            val, _ = quad(
                lambda t: g.value(x0 + e * (t - t0)) * d.survival(t),
                a,
                b,
                epsabs=QUAD_ABS_TOL,
                epsrel=QUAD_ABS_TOL,
                limit=400,
            )
            total += val
        if t1 > q:
            # Analytic tail: g is non-increasing, so this over-counts by
            # at most g(x(q)) * TAIL_MASS * mrl — negligible by construction.
            a_tail = max(t0, q)
            total += g.value(x0 + e * (a_tail - t0)) * d.integrated_survival(a_tail, t1)
    return total / d.mean()


def cost_rate(policy: AllocationPolicy, d: DurationModel, sigma_e: float) -> float:
    """Long-run average spend rate sigma_e * E[integral of e over a cycle] / E[Y]."""
    if not sigma_e > 0:
        raise DomainError(f"sigma_e must be positive, got {sigma_e}")
    total = 0.0
    for t0, t1, _x0, e in policy.segments():
        if e > 0.0:
            total += e * d.integrated_survival(t0, t1)
    return sigma_e * total / d.mean()


class SignPattern(Enum):
    NEG_THEN_POS = "NEG_THEN_POS"
    POS_THEN_NEG = "POS_THEN_NEG"
    ALL_NEG = "ALL_NEG"
    ALL_POS = "ALL_POS"
    INCONSISTENT = "INCONSISTENT"


@dataclass(frozen=True)
class PmpReport:
    """Numerical evaluation of the switching function for a single-switch policy."""

    multiplier: float
    times: tuple[float, ...]
    phi: tuple[float, ...]
    sign_pattern: SignPattern
    kind: str  # "front" or "back"
    switch_time: float
    phi_at_switch: float
    scale: float
    certified: bool


def _side_sign(values: list[float], ztol: float) -> str:
    has_pos = any(v > ztol for v in values)
    has_neg = any(v < -ztol for v in values)
    if has_pos and has_neg:
        return "MIXED"
    if has_pos:
        return "POS"
    if has_neg:
        return "NEG"
    return "ZERO"


_PATTERNS = {
    ("NEG", "POS"): SignPattern.NEG_THEN_POS,
    ("NEG", "ZERO"): SignPattern.NEG_THEN_POS,
    ("POS", "NEG"): SignPattern.POS_THEN_NEG,
    ("POS", "ZERO"): SignPattern.POS_THEN_NEG,
    ("NEG", "NEG"): SignPattern.ALL_NEG,
    ("POS", "POS"): SignPattern.ALL_POS,
}


def default_pmp_grid(d: DurationModel, switch_time: float, n: int = 512) -> tuple[float, ...]:
    """Geometric grid on (0, q0.999), extended past the switch time if needed."""
    hi = max(d.quantile(0.999), 1.5 * switch_time)
    lo = hi * 1e-6
    return tuple(np.geomspace(lo, hi, n))


def pmp_verify(
    policy: AllocationPolicy,
    g: LossCurve,
    d: DurationModel,
    budget: BudgetSpec,
    grid: tuple[float, ...] | None = None,
) -> PmpReport:
    """Evaluate the bang-bang switching function phi(t) = p(t) + nu*survival(t)
    on a grid for a single-switch policy with a binding budget, and classify its
    sign pattern around the switch.

    The costate integral p(t) is anchored at the switch with exact
    integrated-survival terms on the constant-progress side and accumulated by
    quadrature on the active side, so phi(t*) = 0 holds analytically and its
    numerical residual measures quadrature consistency.  The optimality
    certificate for a front-loading policy is NEG_THEN_POS with
    |phi(t*)| < 1e-8 * scale; for back-loading, POS_THEN_NEG.
    """
    if not budget.binding:
        raise UnsupportedPolicy("switching-function verification requires a binding budget")
    M = budget.max_level
    if len(policy.times) != 2:
        raise UnsupportedPolicy("only single-switch policies are supported")
    t_star = policy.times[1]
    lv = policy.levels
    rel = 1e-9 * M
    if abs(lv[0] - M) <= rel and abs(lv[1]) <= rel:
        kind = "front"
    elif abs(lv[0]) <= rel and abs(lv[1] - M) <= rel:
        kind = "back"
    else:
        raise UnsupportedPolicy("policy is not a front- or back-loading single switch at level M")

    if grid is None:
        grid = default_pmp_grid(d, t_star)
    ts = sorted(grid)
    s_star = d.survival(t_star)
    q = _truncation_point(d)

    def x_of(t: float) -> float:
        return policy.progress(t)

    def integrand(s: float) -> float:
        return g.derivative(x_of(s)) * d.survival(s)

    if kind == "front":
        nu = -g.derivative(M * t_star) * d.mrl(t_star)
        p_star = g.derivative(M * t_star) * d.integrated_survival(t_star, math.inf)

        def p_above(t: float) -> float:
            # constant progress beyond the switch
            return g.derivative(M * t_star) * d.integrated_survival(t, math.inf)

        p_values: dict[float, float] = {}
        below = [t for t in ts if t < t_star]
        acc = p_star
        upper = t_star
        for t in reversed(below):
            piece, _ = quad(integrand, t, upper, epsabs=QUAD_ABS_TOL, epsrel=QUAD_ABS_TOL, limit=200)
            acc += piece
            p_values[t] = acc
            upper = t
        for t in ts:
            if t >= t_star:
                p_values[t] = p_above(t)
    else:
        hi = max(q, ts[-1])
        tail = g.derivative(x_of(hi)) * d.integrated_survival(hi, math.inf)
        above = [t for t in ts if t > t_star]
        p_values = {}
        acc = tail
        lower = hi
        for t in reversed(above):
            if t < lower:
                piece, _ = quad(integrand, t, lower, epsabs=QUAD_ABS_TOL, epsrel=QUAD_ABS_TOL, limit=200)
                acc += piece
                lower = t
            p_values[t] = acc
        piece, _ = quad(integrand, t_star, lower, epsabs=QUAD_ABS_TOL, epsrel=QUAD_ABS_TOL, limit=200)
        p_star = acc + piece
        nu = -p_star / s_star
        for t in ts:
            if t <= t_star:
                # idle segment: derivative of the loss is constant at g'(0)
                p_values[t] = p_star + g.derivative(0.0) * d.integrated_survival(t, t_star)

    phi = [p_values[t] + nu * d.survival(t) for t in ts]
    phi_at_switch = p_star + nu * s_star

    scale = max(max(abs(v) for v in phi), abs(nu) * s_star, 1e-30)
    ztol = 1e-8 * scale
    eps = 1e-12 * max(1.0, t_star)
    before = [v for t, v in zip(ts, phi) if t < t_star - eps]
    after = [v for t, v in zip(ts, phi) if t > t_star + eps]
    pattern = _PATTERNS.get((_side_sign(before, ztol), _side_sign(after, ztol)), SignPattern.INCONSISTENT)

    wanted = SignPattern.NEG_THEN_POS if kind == "front" else SignPattern.POS_THEN_NEG
    certified = pattern is wanted and abs(phi_at_switch) < 1e-8 * scale
    return PmpReport(
        multiplier=nu,
        times=tuple(ts),
        phi=tuple(phi),
        sign_pattern=pattern,
        kind=kind,
        switch_time=t_star,
        phi_at_switch=phi_at_switch,
        scale=scale,
        certified=certified,
    )
