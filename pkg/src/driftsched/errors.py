"""Structured exceptions shared across the package."""


class DriftSchedError(Exception):
    """Base class for all library errors."""


class DomainError(DriftSchedError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class SurvivalUnderflow(DriftSchedError, ArithmeticError):
    """Survival probability fell below the representable floor (1e-300)."""


class NotAbsolutelyContinuous(DriftSchedError, TypeError):
    """Density or hazard requested for a distribution without a density."""


class SingularAtOrigin(DriftSchedError, ValueError):
    """Loss curve evaluated at its non-integrable singular point."""


class DerivativeKink(DriftSchedError, ValueError):
    """Derivative requested exactly at a kink of a piecewise curve."""


class SolverFailure(DriftSchedError, RuntimeError):
    """A numerical solver exhausted its iteration budget or lost its bracket."""


class UnsupportedPolicy(DriftSchedError, ValueError):
    """The operation only supports a restricted policy shape."""


class SpecParseError(DriftSchedError, ValueError):
    """A textual distribution/loss/config specification failed to parse."""
