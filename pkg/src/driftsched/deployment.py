"""Deployment schedules: client-side renewal loss, effective deployment
counts, the fixed-count stationarity solver, the exponential closed-form
chain, randomized rate matching, and the periodic baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .durations import Deterministic, DurationModel, Erlang, Exponential, HyperExponential, Weibull
from .errors import DomainError, SolverFailure
from .losses import LossCurve

__all__ = [
    "DeploymentSchedule",
    "RandomizedSchedule",
    "client_time_average_loss",
    "effective_count",
    "stationarity_residuals",
    "solve_fixed_n",
    "chain_exponential",
    "randomize_to_rate",
    "mixture_client_loss",
    "periodic_for_rate",
    "periodic_schedule",
    "constrained_fixed_n",
    "rate_kkt_residuals",
    "has_convex_survival",
]

# Offsets whose survival falls below this are dropped from explicit schedules.
SCHEDULE_TRUNCATION = 1e-12
SHOOT_MAX_ITER = 200
SHOOT_ROOT_TOL = 1e-10
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class DeploymentSchedule:
    """Strictly increasing deployment offsets within a concept; offsets[0] == 0
    is the initial deployment and does not count against the rate."""

    offsets: tuple[float, ...]

    def __post_init__(self) -> None:
        offsets = tuple(float(x) for x in self.offsets)
        object.__setattr__(self, "offsets", offsets)
        if not offsets or offsets[0] != 0.0:
            raise DomainError("offsets must start at 0")
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise DomainError("offsets must be strictly increasing")
        if any(math.isinf(x) or math.isnan(x) for x in offsets):
            raise DomainError("offsets must be finite")

    @classmethod
    def initial_only(cls) -> "DeploymentSchedule":
        return cls((0.0,))

    @property
    def count(self) -> int:
        """Number of re-deployments N (excludes the initial one at 0)."""
        return len(self.offsets) - 1

    @property
    def gaps(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.offsets, self.offsets[1:]))

    def to_text(self) -> str:
        return "\n".join(f"{x:.17g}" for x in self.offsets) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DeploymentSchedule":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        try:
            offsets = tuple(float(ln) for ln in lines)
        except ValueError as exc:
            raise DomainError(f"schedule text contains a non-number: {exc}") from None
        return cls(offsets)


@dataclass(frozen=True)
class RandomizedSchedule:
    """Per-concept coin flip between two fixed-count schedules: the low one is
    chosen with probability gamma so the mean effective count hits a target."""

    schedule_low: DeploymentSchedule
    schedule_high: DeploymentSchedule
    gamma: float
    target_count: float

    def __post_init__(self) -> None:
        if not 0 <= self.gamma <= 1:
            raise DomainError(f"gamma must lie in [0, 1], got {self.gamma}")


def client_time_average_loss(s: DeploymentSchedule, g: LossCurve, d: DurationModel) -> float:
    """Long-run time-average loss seen by clients under unit training rate:
    (1/E[Y]) * sum_j g(offset_j) * integral of survival over [offset_j, offset_{j+1})."""
    total = 0.0
    offs = s.offsets
    for j, t in enumerate(offs):
        nxt = offs[j + 1] if j + 1 < len(offs) else math.inf
        gx = g.value(t)
        if math.isinf(gx):
            return math.inf
        total += gx * d.integrated_survival(t, nxt)
    return total / d.mean()


def effective_count(s: DeploymentSchedule, d: DurationModel) -> float:
    """Expected number of re-deployments per concept, sum_j survival(offset_j)."""
    return sum(d.survival(t) for t in s.offsets[1:])


def stationarity_residuals(s: DeploymentSchedule, d: DurationModel, g: LossCurve) -> tuple[float, ...]:
    """Residuals of the fixed-count first-order conditions, one per offset k>=1:
    (g(d_{k-1}) - g(d_k)) / (-g'(d_k))  minus  MRL(d_N) for the last offset,
    or the normalized forward survival mass for interior offsets."""
    offs = s.offsets
    n = s.count
    if n < 1:
        return ()
    res = []
    for k in range(1, n + 1):
        lhs = (g.value(offs[k - 1]) - g.value(offs[k])) / (-g.derivative(offs[k]))
        if k == n:
            rhs = d.mrl(offs[n])
        else:
            rhs = d.integrated_survival(offs[k], offs[k + 1]) / d.survival(offs[k])
        res.append(lhs - rhs)
    return tuple(res)


def _shoot_backward(d: DurationModel, g: LossCurve, n: int, last: float) -> list[float] | None:
    """Backward recursion from a guessed final offset; returns the offsets
    d_0..d_n or None when some offset would have to be negative."""
    offs = [0.0] * (n + 1)
    offs[n] = last
    g0 = g.value(0.0)
    target = g.value(last) + (-g.derivative(last)) * d.mrl(last)
    if target > g0:
        return None
    offs[n - 1] = g.inverse(target)
    for k in range(n - 1, 0, -1):
        mass = d.integrated_survival(offs[k], offs[k + 1]) / d.survival(offs[k])
        target = g.value(offs[k]) + (-g.derivative(offs[k])) * mass
        if target > g0:
            return None
        offs[k - 1] = g.inverse(target)
        if offs[k - 1] >= offs[k]:
            return None  # numerically degenerate shot
    return offs


def solve_fixed_n(d: DurationModel, g: LossCurve, n_deploy: int) -> DeploymentSchedule:
    """Optimal schedule with a fixed number of re-deployments, via shooting:
    guess the final offset, recover the earlier ones backward from the
    stationarity relations, and bisect the guess until the chain lands on 0.
    """
    if n_deploy < 1:
        raise DomainError(f"need at least one deployment, got {n_deploy}")
    if isinstance(d, Deterministic):
        raise DomainError("fixed-count solver requires survival > 0 on [0, inf)")

    def first_offset(last: float) -> float:
        offs = _shoot_backward(d, g, n_deploy, last)
        return -math.inf if offs is None else offs[0]

    lo = d.mean() * 1e-9
    while first_offset(lo) > 0 and lo > 1e-200:
        lo *= 1e-3
    hi = d.mean()
    expansions = 0
    while first_offset(hi) <= 0:
        hi *= 2.0
        expansions += 1
        if expansions > 200:
            raise SolverFailure("solve_fixed_n: could not bracket the final offset")
    for _ in range(SHOOT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if first_offset(mid) < 0:
            lo = mid
        else:
            hi = mid
    offs = _shoot_backward(d, g, n_deploy, hi)  # hi side is feasible by construction
    if offs is None or abs(offs[0]) > SHOOT_ROOT_TOL:
        raise SolverFailure(
            f"solve_fixed_n: shooting residual {offs[0] if offs else math.nan} "
            f"exceeds {SHOOT_ROOT_TOL}"
        )
    offs[0] = 0.0
    schedule = DeploymentSchedule(tuple(offs))
    worst = max(abs(r) for r in stationarity_residuals(schedule, d, g))
    if worst > RESIDUAL_TOL:
        raise SolverFailure(f"solve_fixed_n: stationarity residual {worst} exceeds {RESIDUAL_TOL}")
    return schedule


def chain_exponential(beta: float, lam: float, n_deploy: int) -> DeploymentSchedule:
    """Closed-form optimal schedule for exponential loss decay (rate beta)
    against exponentially distributed durations (rate lam).

    The final gap is ln(1 + beta/lam)/beta and earlier gaps follow the
    backward recursion gap_k = ln(1 + (beta/lam)(1 - exp(-lam*gap_{k+1})))/beta,
    which agrees with the general stationarity solver (extending the count
    leaves existing gaps unchanged).
    """
    if not (beta > 0 and lam > 0):
        raise DomainError("beta and lam must be positive")
    if n_deploy < 1:
        raise DomainError(f"need at least one deployment, got {n_deploy}")
    gaps = [math.log1p(beta / lam) / beta]
    for _ in range(n_deploy - 1):
        gaps.append(math.log1p((beta / lam) * -math.expm1(-lam * gaps[-1])) / beta)
    gaps.reverse()
    offsets = [0.0]
    for gp in gaps:
        offsets.append(offsets[-1] + gp)
    return DeploymentSchedule(tuple(offsets))


def randomize_to_rate(
    d: DurationModel, g: LossCurve, rate: float, max_count: int = 4096
) -> RandomizedSchedule:
    """Mix the fixed-count optima with adjacent counts so the expected effective
    count equals rate * E[Y] exactly."""
    if not rate > 0:
        raise DomainError(f"rate must be positive, got {rate}")
    target = rate * d.mean()
    low = DeploymentSchedule.initial_only()
    r_low = 0.0
    n = 1
    while n <= max_count:
        high = solve_fixed_n(d, g, n)
        r_high = effective_count(high, d)
        if abs(r_high - target) <= 1e-12 * max(1.0, target):
            # Target sits exactly on a fixed-count optimum: pure schedule.
            return RandomizedSchedule(high, solve_fixed_n(d, g, n + 1), 1.0, target)
        if r_high > target:
            gamma = (r_high - target) / (r_high - r_low)
            return RandomizedSchedule(low, high, gamma, target)
        low, r_low = high, r_high
        n += 1
    raise SolverFailure(f"randomize_to_rate: target count {target} not reached by {max_count} deployments")


def mixture_client_loss(rs: RandomizedSchedule, g: LossCurve, d: DurationModel) -> float:
    """Renewal average of the randomized policy: the gamma-convex combination of
    the two per-schedule renewal averages (the coin is i.i.d. per concept)."""
    return rs.gamma * client_time_average_loss(rs.schedule_low, g, d) + (
        1.0 - rs.gamma
    ) * client_time_average_loss(rs.schedule_high, g, d)


def _periodic_count(d: DurationModel, period: float) -> float:
    total = 0.0
    j = 1
    while True:
        s = d.survival(j * period)
        if s < 1e-15:
            return total
        total += s
        j += 1
        if j > 10_000_000:
            raise SolverFailure("periodic count did not converge (period too small)")


def periodic_schedule(d: DurationModel, period: float) -> DeploymentSchedule:
    """Equally spaced offsets truncated where survival drops below 1e-12."""
    if not period > 0:
        raise DomainError(f"period must be positive, got {period}")
    offsets = [0.0]
    j = 1
    while d.survival(j * period) >= SCHEDULE_TRUNCATION:
        offsets.append(j * period)
        j += 1
    return DeploymentSchedule(tuple(offsets))


def periodic_for_rate(d: DurationModel, rate: float) -> DeploymentSchedule:
    """Periodic schedule whose effective count matches rate * E[Y] by bisection
    on the period (the survival sum is decreasing in the period)."""
    if not rate > 0:
        raise DomainError(f"rate must be positive, got {rate}")
    target = rate * d.mean()
    hi = d.mean()
    while _periodic_count(d, hi) > target:
        hi *= 2.0
    lo = hi
    while _periodic_count(d, lo) < target:
        lo *= 0.5
        if lo < 1e-12 * d.mean():
            raise SolverFailure("periodic_for_rate: period underflow while bracketing")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _periodic_count(d, mid) > target:
            lo = mid
        else:
            hi = mid
    period = 0.5 * (lo + hi)
    if abs(_periodic_count(d, period) - target) > 1e-9 * max(1.0, target):
        raise SolverFailure("periodic_for_rate: bisection did not meet the count tolerance")
    return periodic_schedule(d, period)


def has_convex_survival(d: DurationModel) -> bool:
    """Whether the survival function is convex on [0, inf), the condition under
    which the rate-constrained first-order equations certify optimality."""
    if isinstance(d, (Exponential, HyperExponential)):
        return True
    if isinstance(d, Weibull):
        return d.shape <= 1.0
    if isinstance(d, Erlang):
        return d.stages == 1
    return False


def constrained_fixed_n(
    d: DurationModel, g: LossCurve, n_deploy: int, count: float
) -> DeploymentSchedule | None:
    """Best schedule with n_deploy re-deployments whose effective count equals
    `count`, found by direct low-dimensional constrained minimization over the
    gaps from several structured starts.  Returns None when no feasible start
    converges.  For non-convex survival this is a heuristic (local) optimum.
    """
    if n_deploy < 1:
        raise DomainError(f"need at least one deployment, got {n_deploy}")
    if count >= n_deploy:
        return None  # sum of n survivals is < n for positive offsets

    def unpack(gaps: np.ndarray) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(gaps)))

    def objective(gaps: np.ndarray) -> float:
        offs = unpack(gaps)
        total = 0.0
        for j in range(n_deploy + 1):
            nxt = offs[j + 1] if j + 1 <= n_deploy else math.inf
            total += g.value(float(offs[j])) * d.integrated_survival(float(offs[j]), float(nxt))
        return total / d.mean()

    def constraint(gaps: np.ndarray) -> float:
        offs = unpack(gaps)
        return sum(d.survival(float(t)) for t in offs[1:]) - count

    def scaled_start(base: DeploymentSchedule) -> np.ndarray | None:
        # Scale all gaps by a common factor so the count constraint holds.
        gaps = np.asarray(base.gaps, dtype=float)
        lo_f, hi_f = 1e-3, 1.0
        fn = lambda f: sum(d.survival(float(t)) for t in np.cumsum(gaps * f)) - count
        while fn(hi_f) > 0:  # schedule too early -> count too high -> stretch
            hi_f *= 2.0
            if hi_f > 1e6:
                return None
        while fn(lo_f) < 0:
            lo_f *= 0.5
            if lo_f < 1e-9:
                return None
        for _ in range(100):
            mid = 0.5 * (lo_f + hi_f)
            if fn(mid) > 0:
                lo_f = mid
            else:
                hi_f = mid
        return gaps * (0.5 * (lo_f + hi_f))

    starts: list[np.ndarray] = []
    try:
        base = solve_fixed_n(d, g, n_deploy)
        s0 = scaled_start(base)
        if s0 is not None:
            starts.append(s0)
    except SolverFailure:
        pass
    # Equal-gap start matched to the count.
    eq = DeploymentSchedule(tuple(np.linspace(0.0, n_deploy * d.mean(), n_deploy + 1)))
    s1 = scaled_start(eq)
    if s1 is not None:
        starts.append(s1)
    if not starts:
        return None

    best: tuple[float, np.ndarray] | None = None
    for x0 in starts:
        res = minimize(
            objective,
            x0,
            method="SLSQP",
            bounds=[(1e-9, None)] * n_deploy,
            constraints=[{"type": "eq", "fun": constraint}],
            options={"ftol": 1e-12, "maxiter": 500},
        )
        if not res.success or abs(constraint(res.x)) > 1e-7:
            continue
        val = objective(res.x)
        if best is None or val < best[0]:
            best = (val, res.x)
    if best is None:
        return None
    return DeploymentSchedule(tuple(unpack(best[1])))


def rate_kkt_residuals(
    s: DeploymentSchedule, d: DurationModel, g: LossCurve
) -> tuple[float, tuple[float, ...]]:
    """Residual check of the rate-constrained first-order conditions on a
    candidate schedule: the multiplier is extracted from the final offset's
    equation and the interior equations are evaluated with it.  Returns
    (multiplier, residuals).  Meaningful as an optimality certificate only for
    convex-survival families."""
    offs = s.offsets
    n = s.count
    if n < 1:
        raise DomainError("schedule must contain at least one re-deployment")
    k = n
    nu = (
        (g.value(offs[k - 1]) - g.value(offs[k])) * d.survival(offs[k])
        + g.derivative(offs[k]) * d.integrated_survival(offs[k], math.inf)
    ) / d.density(offs[k])
    residuals = []
    for k in range(1, n):
        r = (
            (g.value(offs[k - 1]) - g.value(offs[k])) * d.survival(offs[k])
            + g.derivative(offs[k]) * d.integrated_survival(offs[k], offs[k + 1])
            - nu * d.density(offs[k])
        )
        residuals.append(r)
    return nu, tuple(residuals)
