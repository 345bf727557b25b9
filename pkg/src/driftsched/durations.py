"""Concept-duration distributions and their reliability/aging functionals.

Each model exposes the survival function, density, hazard rate, mean residual
life (MRL), integrated survival, quantiles and seeded sampling.  Closed forms
are used throughout; nothing here requires quadrature.
"""

from __future__ import annotations

import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaincc, gammainccinv

from .errors import (
    DomainError,
    NotAbsolutelyContinuous,
    SpecParseError,
    SurvivalUnderflow,
)

SURVIVAL_FLOOR = 1e-300
# Relative tolerance for treating MRL values as tied during classification.
MRL_CLASSIFY_RTOL = 1e-9

__all__ = [
    "DurationModel",
    "Exponential",
    "Weibull",
    "Erlang",
    "HyperExponential",
    "Deterministic",
    "AgingTag",
    "AgingClass",
    "classify_aging",
    "default_classification_grid",
    "parse_duration",
]


def _check_time(t: float) -> float:
    if t < 0 or math.isnan(t):
        raise DomainError(f"time must be nonnegative, got {t}")
    return float(t)


class DurationModel(ABC):
    """Distribution of the random time between consecutive sudden drifts."""

    @abstractmethod
    def mean(self) -> float:
        """Expected duration E[Y] (always finite and positive)."""

    @abstractmethod
    def survival(self, t: float) -> float:
        """P(Y > t)."""

    @abstractmethod
    def density(self, t: float) -> float:
        """Probability density at t; may be math.inf at a singular endpoint."""

    @abstractmethod
    def integrated_survival(self, a: float, b: float = math.inf) -> float:
        """Integral of the survival function over [a, b]; b may be inf."""

    @abstractmethod
    def quantile(self, p: float) -> float:
        """Smallest t with P(Y <= t) >= p, for p in [0, 1)."""

    @abstractmethod
    def sample(self, rng: np.random.Generator) -> float:
        """One draw of Y, deterministic given the generator state."""

    @abstractmethod
    def spec(self) -> str:
        """Round-trippable text form (see parse_duration)."""

    def cdf(self, t: float) -> float:
        return 1.0 - self.survival(t)

    def hazard(self, t: float) -> float:
        s = self.survival(t)
        if s <= SURVIVAL_FLOOR:
            raise SurvivalUnderflow(f"survival underflow at t={t}")
        return self.density(t) / s

    def mrl(self, t: float) -> float:
        """Mean residual life E[Y - t | Y > t]."""
        s = self.survival(t)
        if s <= SURVIVAL_FLOOR:
            raise SurvivalUnderflow(f"survival underflow at t={t}")
        return self.integrated_survival(t, math.inf) / s


def _exp_sample(rate: float, rng: np.random.Generator) -> float:
    # Inverse-CDF convention: u -> -ln(1 - u) / rate.
    return -math.log1p(-rng.random()) / rate


@dataclass(frozen=True)
class Exponential(DurationModel):
    rate: float

    def __post_init__(self) -> None:
        if not self.rate > 0:
            raise DomainError(f"rate must be positive, got {self.rate}")

    def mean(self) -> float:
        return 1.0 / self.rate

    def survival(self, t: float) -> float:
        return math.exp(-self.rate * _check_time(t))

    def density(self, t: float) -> float:
        return self.rate * math.exp(-self.rate * _check_time(t))

    def hazard(self, t: float) -> float:
        _check_time(t)
        return self.rate

    def mrl(self, t: float) -> float:
        _check_time(t)
        if self.survival(t) <= SURVIVAL_FLOOR:
            raise SurvivalUnderflow(f"survival underflow at t={t}")
        return 1.0 / self.rate

    def integrated_survival(self, a: float, b: float = math.inf) -> float:
        a = _check_time(a)
        if b < a:
            raise DomainError(f"need a <= b, got a={a}, b={b}")
        hi = 0.0 if math.isinf(b) else math.exp(-self.rate * b)
        return (math.exp(-self.rate * a) - hi) / self.rate

    def quantile(self, p: float) -> float:
        if not 0 <= p < 1:
            raise DomainError(f"quantile needs p in [0, 1), got {p}")
        return -math.log1p(-p) / self.rate

    def sample(self, rng: np.random.Generator) -> float:
        return _exp_sample(self.rate, rng)

    def spec(self) -> str:
        return f"exp(rate={self.rate:g})"


@dataclass(frozen=True)
class Weibull(DurationModel):
    shape: float
    scale: float

    def __post_init__(self) -> None:
        if not (self.shape > 0 and self.scale > 0):
            raise DomainError(f"shape and scale must be positive, got {self}")

    @classmethod
    def with_mean(cls, shape: float, mean: float = 1.0) -> "Weibull":
        """Weibull with the given shape, scaled so that E[Y] = mean."""
        return cls(shape, mean / math.gamma(1.0 + 1.0 / shape))

    def mean(self) -> float:
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)

    def survival(self, t: float) -> float:
        return math.exp(-((_check_time(t) / self.scale) ** self.shape))

    def density(self, t: float) -> float:
        t = _check_time(t)
        if t == 0.0:
            if self.shape < 1:
                return math.inf
            if self.shape == 1:
                return 1.0 / self.scale
            return 0.0
        z = t / self.scale
        return (self.shape / self.scale) * z ** (self.shape - 1.0) * math.exp(-(z**self.shape))

    def hazard(self, t: float) -> float:
        t = _check_time(t)
        if t == 0.0:
            # Unbounded hazard at the origin for shape < 1: explicit marker.
            if self.shape < 1:
                return math.inf
            return 0.0 if self.shape > 1 else 1.0 / self.scale
        if self.survival(t) <= SURVIVAL_FLOOR:
            raise SurvivalUnderflow(f"survival underflow at t={t}")
        return (self.shape / self.scale) * (t / self.scale) ** (self.shape - 1.0)

    def integrated_survival(self, a: float, b: float = math.inf) -> float:
        a = _check_time(a)
        if b < a:
            raise DomainError(f"need a <= b, got a={a}, b={b}")
        inv = 1.0 / self.shape
        qa = float(gammaincc(inv, (a / self.scale) ** self.shape))
        qb = 0.0 if math.isinf(b) else float(gammaincc(inv, (b / self.scale) ** self.shape))
        return self.mean() * (qa - qb)

    def quantile(self, p: float) -> float:
        if not 0 <= p < 1:
            raise DomainError(f"quantile needs p in [0, 1), got {p}")
        return self.scale * (-math.log1p(-p)) ** (1.0 / self.shape)

    def sample(self, rng: np.random.Generator) -> float:
        return self.scale * (-math.log1p(-rng.random())) ** (1.0 / self.shape)

    def spec(self) -> str:
        return f"weibull(k={self.shape:g},scale={self.scale:g})"


@dataclass(frozen=True)
class Erlang(DurationModel):
    stages: int
    rate: float

    def __post_init__(self) -> None:
        if not (isinstance(self.stages, int) and self.stages >= 1):
            raise DomainError(f"stages must be an integer >= 1, got {self.stages}")
        if not self.rate > 0:
            raise DomainError(f"rate must be positive, got {self.rate}")

    def mean(self) -> float:
        return self.stages / self.rate

    def survival(self, t: float) -> float:
        x = self.rate * _check_time(t)
        # P(Y > t) = Q(n, rate*t), the regularized upper incomplete gamma.
        return float(gammaincc(self.stages, x))

    def density(self, t: float) -> float:
        t = _check_time(t)
        x = self.rate * t
        if t == 0.0:
            return self.rate if self.stages == 1 else 0.0
        log_f = (
            self.stages * math.log(self.rate)
            + (self.stages - 1) * math.log(t)
            - x
            - math.lgamma(self.stages)
        )
        return math.exp(log_f)

    def integrated_survival(self, a: float, b: float = math.inf) -> float:
        a = _check_time(a)
        if b < a:
            raise DomainError(f"need a <= b, got a={a}, b={b}")
        js = np.arange(1, self.stages + 1)
        qa = gammaincc(js, self.rate * a).sum()
        qb = 0.0 if math.isinf(b) else gammaincc(js, self.rate * b).sum()
        return float(qa - qb) / self.rate

    def quantile(self, p: float) -> float:
        if not 0 <= p < 1:
            raise DomainError(f"quantile needs p in [0, 1), got {p}")
        return float(gammainccinv(self.stages, 1.0 - p)) / self.rate

    def sample(self, rng: np.random.Generator) -> float:
        # Convolution of `stages` independent exponentials.
        return sum(_exp_sample(self.rate, rng) for _ in range(self.stages))

    def spec(self) -> str:
        return f"erlang(n={self.stages},rate={self.rate:g})"


@dataclass(frozen=True)
class HyperExponential(DurationModel):
    weights: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.weights) != len(self.rates) or not self.weights:
            raise DomainError("weights and rates must be equal-length and non-empty")
        if any(w <= 0 for w in self.weights) or any(r <= 0 for r in self.rates):
            raise DomainError("weights and rates must be positive")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise DomainError(f"weights must sum to 1, got {sum(self.weights)}")

    def mean(self) -> float:
        return sum(w / r for w, r in zip(self.weights, self.rates))

    def survival(self, t: float) -> float:
        t = _check_time(t)
        return sum(w * math.exp(-r * t) for w, r in zip(self.weights, self.rates))

    def density(self, t: float) -> float:
        t = _check_time(t)
        return sum(w * r * math.exp(-r * t) for w, r in zip(self.weights, self.rates))

    def integrated_survival(self, a: float, b: float = math.inf) -> float:
        a = _check_time(a)
        if b < a:
            raise DomainError(f"need a <= b, got a={a}, b={b}")
        total = 0.0
        for w, r in zip(self.weights, self.rates):
            hi = 0.0 if math.isinf(b) else math.exp(-r * b)
            total += w * (math.exp(-r * a) - hi) / r
        return total

    def quantile(self, p: float) -> float:
        if not 0 <= p < 1:
            raise DomainError(f"quantile needs p in [0, 1), got {p}")
        if p == 0:
            return 0.0
        target = 1.0 - p
        hi = self.mean()
        while self.survival(hi) > target:
            hi *= 2.0
        return float(brentq(lambda t: self.survival(t) - target, 0.0, hi, xtol=1e-14, rtol=8.9e-16))

    def sample(self, rng: np.random.Generator) -> float:
        # Mixture composition: pick a branch, then draw its exponential.
        u = rng.random()
        acc = 0.0
        rate = self.rates[-1]
        for w, r in zip(self.weights, self.rates):
            acc += w
            if u < acc:
                rate = r
                break
        return _exp_sample(rate, rng)

    def spec(self) -> str:
        w = ":".join(f"{x:g}" for x in self.weights)
        r = ":".join(f"{x:g}" for x in self.rates)
        return f"hyperexp(w={w},rates={r})"


@dataclass(frozen=True)
class Deterministic(DurationModel):
    """Point mass at a fixed duration; used for simulator sanity checks."""

    value: float

    def __post_init__(self) -> None:
        if not self.value > 0:
            raise DomainError(f"value must be positive, got {self.value}")

    def mean(self) -> float:
        return self.value

    def survival(self, t: float) -> float:
        return 1.0 if _check_time(t) < self.value else 0.0

    def density(self, t: float) -> float:
        raise NotAbsolutelyContinuous("deterministic duration has no density")

    def hazard(self, t: float) -> float:
        raise NotAbsolutelyContinuous("deterministic duration has no hazard rate")

    def mrl(self, t: float) -> float:
        t = _check_time(t)
        if t >= self.value:
            raise SurvivalUnderflow(f"survival is zero at t={t}")
        return self.value - t

    def integrated_survival(self, a: float, b: float = math.inf) -> float:
        a = _check_time(a)
        if b < a:
            raise DomainError(f"need a <= b, got a={a}, b={b}")
        return max(0.0, min(b, self.value) - min(a, self.value))

    def quantile(self, p: float) -> float:
        if not 0 <= p < 1:
            raise DomainError(f"quantile needs p in [0, 1), got {p}")
        return self.value

    def sample(self, rng: np.random.Generator) -> float:
        return self.value

    def spec(self) -> str:
        return f"det(y={self.value:g})"


class AgingTag(Enum):
    DMRL = "DMRL"
    IMRL = "IMRL"
    CONSTANT = "CONSTANT"
    MIXED = "MIXED"


@dataclass(frozen=True)
class AgingClass:
    tag: AgingTag
    evidence: tuple[tuple[float, float], ...]  # (t, mrl(t)) pairs used


def default_classification_grid(model: DurationModel, n: int = 64) -> list[float]:
    """Geometric grid from E[Y]/100 to the 0.999 quantile."""
    lo = model.mean() / 100.0
    hi = model.quantile(0.999)
    if hi <= lo:
        hi = 2.0 * lo
    return list(np.geomspace(lo, hi, n))


def classify_aging(model: DurationModel, grid: list[float] | None = None) -> AgingClass:
    """Classify the MRL of `model` as DMRL / IMRL / CONSTANT / MIXED on a grid."""
    if grid is None:
        grid = default_classification_grid(model)
    if not grid:
        raise DomainError("classification grid must be non-empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("classification grid must be strictly increasing")
    values = [model.mrl(t) for t in grid]
    scale = max(abs(v) for v in values)
    tol = MRL_CLASSIFY_RTOL * scale
    if all(abs(v - values[0]) <= tol for v in values):
        tag = AgingTag.CONSTANT
    else:
        non_increasing = all(b <= a + tol for a, b in zip(values, values[1:]))
        non_decreasing = all(b >= a - tol for a, b in zip(values, values[1:]))
        if non_increasing:
            tag = AgingTag.DMRL
        elif non_decreasing:
            tag = AgingTag.IMRL
        else:
            tag = AgingTag.MIXED
    return AgingClass(tag, tuple(zip(grid, values)))


_SPEC_RE = re.compile(r"^\s*([a-zA-Z_]+)\s*\(\s*(.*?)\s*\)\s*$")


def _parse_kwargs(body: str, where: str) -> dict[str, str]:
    out: dict[str, str] = {}
    if not body:
        return out
    for part in body.split(","):
        if "=" not in part:
            raise SpecParseError(f"expected key=value in {where!r}, got {part!r}")
        key, val = part.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _parse_head(text: str) -> tuple[str, dict[str, str]]:
    m = _SPEC_RE.match(text)
    if not m:
        raise SpecParseError(f"cannot parse spec {text!r}")
    return m.group(1).lower(), _parse_kwargs(m.group(2), text)


def _get_float(kwargs: dict[str, str], key: str, where: str) -> float:
    try:
        return float(kwargs[key])
    except KeyError:
        raise SpecParseError(f"missing field {key!r} in {where!r}") from None
    except ValueError:
        raise SpecParseError(f"field {key!r} in {where!r} is not a number") from None


def parse_duration(text: str) -> DurationModel:
    """Parse text forms like exp(rate=1), weibull(k=2,scale=1.1284),
    erlang(n=2,rate=2), hyperexp(w=0.5:0.5,rates=0.5:2), det(y=2)."""
    name, kw = _parse_head(text)
    if name == "exp":
        return Exponential(_get_float(kw, "rate", text))
    if name == "weibull":
        return Weibull(_get_float(kw, "k", text), _get_float(kw, "scale", text))
    if name == "erlang":
        n = _get_float(kw, "n", text)
        if n != int(n):
            raise SpecParseError(f"erlang stage count must be an integer in {text!r}")
        return Erlang(int(n), _get_float(kw, "rate", text))
    if name == "hyperexp":
        try:
            weights = tuple(float(x) for x in kw["w"].split(":"))
            rates = tuple(float(x) for x in kw["rates"].split(":"))
        except (KeyError, ValueError):
            raise SpecParseError(f"hyperexp needs w=..:.. and rates=..:.. in {text!r}") from None
        return HyperExponential(weights, rates)
    if name == "det":
        return Deterministic(_get_float(kw, "y", text))
    raise SpecParseError(f"unknown duration family {name!r} in {text!r}")
