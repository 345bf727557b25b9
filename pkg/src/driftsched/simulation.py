"""Renewal-reward Monte Carlo engine for the concept-drift loss process.

Cycle rewards are integrated with the same closed forms the analytic
evaluators use, so Monte Carlo error is purely sampling error.  Randomness is
counter-based: one root seed, one Philox substream per cycle (keyed by cycle
index in the high counter word), so runs are reproducible regardless of
evaluation order and a gamma=1 randomized run replays the plain run exactly.
"""

from __future__ import annotations

import csv
import json
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox
from scipy.integrate import quad

from .allocation import AllocationPolicy
from .deployment import DeploymentSchedule, RandomizedSchedule
from .durations import DurationModel
from .errors import DomainError
from .losses import LossCurve

__all__ = ["SimConfig", "SimOutcome", "cycle_rng", "simulate", "simulate_randomized"]

_UINT64_MASK = (1 << 64) - 1
_STREAM_DURATION = 0
_STREAM_COIN = 1


def cycle_rng(seed: int, cycle: int, stream: int = 0) -> Generator:
    """Per-cycle substream: Philox keyed by the root seed with the cycle index
    in the high counter word, giving each (cycle, stream) pair a disjoint
    2**128 counter block."""
    counter = (cycle << 192) | (stream << 128)
    return Generator(Philox(key=seed & _UINT64_MASK, counter=counter))


@dataclass(frozen=True)
class SimConfig:
    duration: DurationModel
    loss: LossCurve
    policy: AllocationPolicy
    schedule: DeploymentSchedule | None = None
    randomized: RandomizedSchedule | None = None
    n_concepts: int = 10_000
    seed: int = 0
    sigma_e: float = 1.0
    quad_tol: float = 1e-10

    def __post_init__(self) -> None:
        if self.n_concepts < 1:
            raise DomainError(f"n_concepts must be >= 1, got {self.n_concepts}")
        if self.schedule is not None and self.randomized is not None:
            raise DomainError("give either a schedule or a randomized schedule, not both")
        if not self.sigma_e > 0:
            raise DomainError(f"sigma_e must be positive, got {self.sigma_e}")


class _PolicyIntegrator:
    """Precompiled policy for fast per-cycle evaluation of the loss integral
    and the progress x(t)."""

    def __init__(self, policy: AllocationPolicy, g: LossCurve, quad_tol: float):
        self.ts = policy.times
        self.es = policy.levels
        self.xs = policy._cum
        self.g = g
        self.quad_tol = quad_tol

    def progress(self, t: float) -> float:
        # rightmost segment with ts[i] <= t
        i = bisect_right(self.ts, t) - 1
        return self.xs[i] + self.es[i] * (t - self.ts[i])

    def loss_and_progress(self, horizon: float) -> tuple[float, float]:
        """(integral of g(x(t)) dt over [0, horizon), x(horizon))."""
        total = 0.0
        for i, (t0, e) in enumerate(zip(self.ts, self.es)):
            if t0 >= horizon:
                break
            t1 = self.ts[i + 1] if i + 1 < len(self.ts) else math.inf
            seg_end = min(t1, horizon)
            dt = seg_end - t0
            x0 = self.xs[i]
            if e == 0.0:
                gx = self.g.value(x0)
                if math.isinf(gx):
                    return math.inf, x0
                total += gx * dt
            else:
                piece = self.g.integral(x0, x0 + e * dt)
                if math.isinf(piece):
                    piece, _ = quad(
                        lambda u: self.g.value(x0 + e * u), 0.0, dt,
                        epsabs=self.quad_tol, epsrel=self.quad_tol, limit=200,
                    )
                total += piece / e
        return total, self.progress(horizon)


class _SchedulePath:
    """Precomputed staircase of the client loss for one schedule: prefix sums
    of g(x(offset_j)) * gap_j, plus O(log n) per-cycle lookups."""

    def __init__(self, schedule: DeploymentSchedule, integ: _PolicyIntegrator):
        self.offsets = schedule.offsets
        self.gvals = [integ.g.value(integ.progress(t)) for t in self.offsets]
        pre = [0.0]
        for j in range(1, len(self.offsets)):
            pre.append(pre[-1] + self.gvals[j - 1] * (self.offsets[j] - self.offsets[j - 1]))
        self.prefix = pre

    def loss_and_count(self, horizon: float) -> tuple[float, int]:
        """(integral of the deployed-model loss over [0, horizon), number of
        re-deployments strictly before the horizon)."""
        j = bisect_left(self.offsets, horizon) - 1
        loss = self.prefix[j] + self.gvals[j] * (horizon - self.offsets[j])
        return loss, j


@dataclass(frozen=True)
class SimOutcome:
    n_concepts: int
    total_time: float
    server_loss_avg: float
    server_loss_se: float
    client_loss_avg: float
    client_loss_se: float
    cost_rate_avg: float
    cost_rate_se: float
    deployment_rate_avg: float
    deployment_rate_se: float
    deploy_count_avg: float
    deploy_count_se: float
    diverged: bool
    durations: np.ndarray
    server_cycle_loss: np.ndarray
    client_cycle_loss: np.ndarray
    cycle_cost: np.ndarray
    cycle_deployments: np.ndarray

    def summary_dict(self) -> dict:
        return {
            "n_concepts": self.n_concepts,
            "total_time": self.total_time,
            "server_loss_avg": self.server_loss_avg,
            "server_loss_se": self.server_loss_se,
            "client_loss_avg": self.client_loss_avg,
            "client_loss_se": self.client_loss_se,
            "cost_rate_avg": self.cost_rate_avg,
            "cost_rate_se": self.cost_rate_se,
            "deployment_rate_avg": self.deployment_rate_avg,
            "deployment_rate_se": self.deployment_rate_se,
            "deploy_count_avg": self.deploy_count_avg,
            "deploy_count_se": self.deploy_count_se,
            "diverged": self.diverged,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary_dict(), indent=2, sort_keys=True)

    def write_cycles_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["cycle", "duration", "server_cycle_loss", "client_cycle_loss", "cost", "deployments"]
            )
            for i in range(self.n_concepts):
                writer.writerow(
                    [
                        i,
                        f"{self.durations[i]:.12g}",
                        f"{self.server_cycle_loss[i]:.12g}",
                        f"{self.client_cycle_loss[i]:.12g}",
                        f"{self.cycle_cost[i]:.12g}",
                        int(self.cycle_deployments[i]),
                    ]
                )


def _ratio_and_jackknife_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Ratio estimator sum(num)/sum(den) with a leave-one-out jackknife SE
    (renewal-reward averages are ratio estimators; naive variance is biased)."""
    sa, sb = float(num.sum()), float(den.sum())
    ratio = sa / sb
    n = len(num)
    if n < 2:
        return ratio, 0.0
    if not np.isfinite(sa):
        return ratio, math.nan
    loo = (sa - num) / (sb - den)
    se = math.sqrt((n - 1) / n * float(((loo - loo.mean()) ** 2).sum()))
    return ratio, se


def _mean_and_sem(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    m = float(values.mean())
    if n < 2:
        return m, 0.0
    return m, float(values.std(ddof=1)) / math.sqrt(n)


def _run(cfg: SimConfig, randomized: bool) -> SimOutcome:
    n = cfg.n_concepts
    integ = _PolicyIntegrator(cfg.policy, cfg.loss, cfg.quad_tol)
    if randomized:
        rs = cfg.randomized
        paths = (_SchedulePath(rs.schedule_low, integ), _SchedulePath(rs.schedule_high, integ))
        gamma = rs.gamma
    else:
        sched = cfg.schedule if cfg.schedule is not None else DeploymentSchedule.initial_only()
        paths = (_SchedulePath(sched, integ),)
        gamma = None

    durations = np.empty(n)
    server = np.empty(n)
    client = np.empty(n)
    cost = np.empty(n)
    deploys = np.empty(n, dtype=np.int64)
    d, sigma_e, seed = cfg.duration, cfg.sigma_e, cfg.seed
    diverged = False
    for i in range(n):
        y = d.sample(cycle_rng(seed, i, _STREAM_DURATION))
        if randomized:
            u = cycle_rng(seed, i, _STREAM_COIN).random()
            path = paths[0] if u < gamma else paths[1]
        else:
            path = paths[0]
        s_loss, x_end = integ.loss_and_progress(y)
        c_loss, n_dep = path.loss_and_count(y)
        if math.isinf(s_loss) or math.isinf(c_loss):
            diverged = True
        durations[i] = y
        server[i] = s_loss
        client[i] = c_loss
        cost[i] = sigma_e * x_end
        deploys[i] = n_dep

    total_time = float(durations.sum())
    server_avg, server_se = _ratio_and_jackknife_se(server, durations)
    client_avg, client_se = _ratio_and_jackknife_se(client, durations)
    cost_avg, cost_se = _ratio_and_jackknife_se(cost, durations)
    rate_avg, rate_se = _ratio_and_jackknife_se(deploys.astype(float), durations)
    count_avg, count_se = _mean_and_sem(deploys.astype(float))
    return SimOutcome(
        n_concepts=n,
        total_time=total_time,
        server_loss_avg=server_avg,
        server_loss_se=server_se,
        client_loss_avg=client_avg,
        client_loss_se=client_se,
        cost_rate_avg=cost_avg,
        cost_rate_se=cost_se,
        deployment_rate_avg=rate_avg,
        deployment_rate_se=rate_se,
        deploy_count_avg=count_avg,
        deploy_count_se=count_se,
        diverged=diverged,
        durations=durations,
        server_cycle_loss=server,
        client_cycle_loss=client,
        cycle_cost=cost,
        cycle_deployments=deploys,
    )


def simulate(cfg: SimConfig) -> SimOutcome:
    """Simulate the renewal loss process under a deterministic (or absent)
    deployment schedule."""
    if cfg.randomized is not None:
        raise DomainError("config carries a randomized schedule; use simulate_randomized")
    return _run(cfg, randomized=False)


def simulate_randomized(cfg: SimConfig) -> SimOutcome:
    """Simulate with a per-concept coin flip between the two schedules of the
    randomized scheduler (low with probability gamma)."""
    if cfg.randomized is None:
        raise DomainError("config lacks a randomized schedule")
    return _run(cfg, randomized=True)
