"""Expected-loss curves: nonnegative, convex, decreasing functions of training
progress, with derivative, antiderivative and inverse access."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

from .durations import _parse_head, _get_float
from .errors import DerivativeKink, DomainError, SingularAtOrigin, SpecParseError

__all__ = [
    "LossCurve",
    "ExpDecay",
    "ShiftedPower",
    "PurePower",
    "Linear",
    "parse_loss",
]


class LossCurve(ABC):
    """Expected loss as a function of accumulated training progress."""

    #: Lower edge of the evaluation domain (0 except for strict-domain PurePower).
    x_lo: float = 0.0

    @abstractmethod
    def value(self, x: float) -> float:
        """Loss at progress x (>= 0 on the domain)."""

    @abstractmethod
    def derivative(self, x: float) -> float:
        """First derivative (<= 0 wherever defined)."""

    @abstractmethod
    def integral(self, a: float, b: float) -> float:
        """Integral of the loss over progress [a, b]; finite for a >= x_lo < b < inf."""

    @abstractmethod
    def inverse(self, v: float) -> float:
        """Progress x with value(x) = v; v must lie in the curve's range."""

    @abstractmethod
    def spec(self) -> str:
        """Round-trippable text form (see parse_loss)."""

    def _check_domain(self, x: float) -> float:
        if x < self.x_lo or math.isnan(x):
            raise DomainError(f"progress {x} outside evaluation domain [{self.x_lo}, inf)")
        return float(x)


@dataclass(frozen=True)
class ExpDecay(LossCurve):
    """alpha * exp(-beta * x)."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError(f"alpha and beta must be positive, got {self}")

    def value(self, x: float) -> float:
        return self.alpha * math.exp(-self.beta * self._check_domain(x))

    def derivative(self, x: float) -> float:
        return -self.alpha * self.beta * math.exp(-self.beta * self._check_domain(x))

    def integral(self, a: float, b: float) -> float:
        a = self._check_domain(a)
        if b < a:
            raise DomainError(f"need a <= b, got a={a}, b={b}")
        hi = 0.0 if math.isinf(b) else math.exp(-self.beta * b)
        return (self.alpha / self.beta) * (math.exp(-self.beta * a) - hi)

    def inverse(self, v: float) -> float:
        if not 0 < v <= self.alpha:
            raise DomainError(f"value {v} outside range (0, {self.alpha}]")
        return -math.log(v / self.alpha) / self.beta

    def spec(self) -> str:
        return f"expdecay(alpha={self.alpha:g},beta={self.beta:g})"


@dataclass(frozen=True)
class ShiftedPower(LossCurve):
    """(1 + x) ** -a."""

    a: float

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise DomainError(f"exponent must be positive, got {self.a}")

    def value(self, x: float) -> float:
        return (1.0 + self._check_domain(x)) ** (-self.a)

    def derivative(self, x: float) -> float:
        return -self.a * (1.0 + self._check_domain(x)) ** (-self.a - 1.0)

    def integral(self, a: float, b: float) -> float:
        lo = self._check_domain(a)
        if b < lo:
            raise DomainError(f"need a <= b, got a={lo}, b={b}")
        p = self.a
        if math.isinf(b):
            return math.inf if p <= 1 else (1.0 + lo) ** (1.0 - p) / (p - 1.0)
        if p == 1.0:
            return math.log((1.0 + b) / (1.0 + lo))
        return ((1.0 + b) ** (1.0 - p) - (1.0 + lo) ** (1.0 - p)) / (1.0 - p)

    def inverse(self, v: float) -> float:
        if not 0 < v <= 1.0:
            raise DomainError(f"value {v} outside range (0, 1]")
        return v ** (-1.0 / self.a) - 1.0

    def spec(self) -> str:
        return f"shiftedpower(a={self.a:g})"


@dataclass(frozen=True)
class PurePower(LossCurve):
    """x ** -a for a in (0, 1); singular but integrable at the origin.

    With ``integrable_singularity`` set (the default when x_lo == 0), value(0)
    returns the marker +inf for integrand-level handling instead of raising.
    """

    a: float
    x_lo: float = 0.0
    integrable_singularity: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.a < 1:
            raise DomainError(f"exponent must lie in (0, 1), got {self.a}")
        if self.x_lo < 0:
            raise DomainError(f"x_lo must be nonnegative, got {self.x_lo}")
        if self.x_lo > 0:
            object.__setattr__(self, "integrable_singularity", False)

    def value(self, x: float) -> float:
        x = self._check_domain(x)
        if x == 0.0:
            if self.integrable_singularity:
                return math.inf
            raise SingularAtOrigin("pure power curve is singular at x=0")
        return x ** (-self.a)

    def derivative(self, x: float) -> float:
        x = self._check_domain(x)
        if x == 0.0:
            if self.integrable_singularity:
                return -math.inf
            raise SingularAtOrigin("pure power curve is singular at x=0")
        return -self.a * x ** (-self.a - 1.0)

    def integral(self, a: float, b: float) -> float:
        a = self._check_domain(a)
        if b < a:
            raise DomainError(f"need a <= b, got a={a}, b={b}")
        if math.isinf(b):
            return math.inf
        p = self.a
        return (b ** (1.0 - p) - a ** (1.0 - p)) / (1.0 - p)

    def inverse(self, v: float) -> float:
        if not v > 0:
            raise DomainError(f"value must be positive, got {v}")
        return v ** (-1.0 / self.a)

    def spec(self) -> str:
        return f"purepower(a={self.a:g})"


@dataclass(frozen=True)
class Linear(LossCurve):
    """max(g0 - beta * x, 0); constant derivative -beta before the clamp."""

    beta: float
    g0: float = 1.0

    def __post_init__(self) -> None:
        if not (self.beta > 0 and self.g0 > 0):
            raise DomainError(f"beta and g0 must be positive, got {self}")

    @property
    def clamp(self) -> float:
        return self.g0 / self.beta

    def value(self, x: float) -> float:
        return max(self.g0 - self.beta * self._check_domain(x), 0.0)

    def derivative(self, x: float) -> float:
        x = self._check_domain(x)
        if x == self.clamp:
            raise DerivativeKink(f"derivative undefined at the clamp point x={x}")
        return -self.beta if x < self.clamp else 0.0

    def integral(self, a: float, b: float) -> float:
        a = self._check_domain(a)
        if b < a:
            raise DomainError(f"need a <= b, got a={a}, b={b}")
        lo, hi = min(a, self.clamp), min(b, self.clamp)
        return self.g0 * (hi - lo) - 0.5 * self.beta * (hi * hi - lo * lo)

    def inverse(self, v: float) -> float:
        if not 0 < v <= self.g0:
            raise DomainError(f"value {v} outside range (0, {self.g0}]")
        return (self.g0 - v) / self.beta

    def spec(self) -> str:
        return f"linear(beta={self.beta:g},g0={self.g0:g})"


def parse_loss(text: str) -> LossCurve:
    """Parse text forms like expdecay(alpha=1,beta=1), shiftedpower(a=0.5),
    purepower(a=0.3), linear(beta=0.3,g0=1)."""
    name, kw = _parse_head(text)
    if name == "expdecay":
        return ExpDecay(_get_float(kw, "alpha", text), _get_float(kw, "beta", text))
    if name == "shiftedpower":
        return ShiftedPower(_get_float(kw, "a", text))
    if name == "purepower":
        x_lo = float(kw["x_lo"]) if "x_lo" in kw else 0.0
        return PurePower(_get_float(kw, "a", text), x_lo=x_lo)
    if name == "linear":
        g0 = float(kw["g0"]) if "g0" in kw else 1.0
        return Linear(_get_float(kw, "beta", text), g0=g0)
    raise SpecParseError(f"unknown loss family {name!r} in {text!r}")
