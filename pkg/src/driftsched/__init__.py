"""Training-resource allocation and model-deployment scheduling under sudden
concept drift: duration models, loss curves, optimal allocation policies,
deployment schedulers, and a renewal Monte Carlo simulator."""

from .allocation import (
    AllocationPolicy,
    BudgetSpec,
    PmpReport,
    SignPattern,
    back_loading_switch,
    cost_rate,
    delayed_block,
    front_loading_switch,
    pmp_verify,
    time_average_loss,
)
from .deployment import (
    DeploymentSchedule,
    RandomizedSchedule,
    chain_exponential,
    client_time_average_loss,
    constrained_fixed_n,
    effective_count,
    has_convex_survival,
    mixture_client_loss,
    periodic_for_rate,
    periodic_schedule,
    randomize_to_rate,
    rate_kkt_residuals,
    solve_fixed_n,
    stationarity_residuals,
)
from .durations import (
    AgingClass,
    AgingTag,
    Deterministic,
    DurationModel,
    Erlang,
    Exponential,
    HyperExponential,
    Weibull,
    classify_aging,
    default_classification_grid,
    parse_duration,
)
from .errors import (
    DerivativeKink,
    DomainError,
    DriftSchedError,
    NotAbsolutelyContinuous,
    SingularAtOrigin,
    SolverFailure,
    SpecParseError,
    SurvivalUnderflow,
    UnsupportedPolicy,
)
from .losses import ExpDecay, Linear, LossCurve, PurePower, ShiftedPower, parse_loss
from .simulation import SimConfig, SimOutcome, cycle_rng, simulate, simulate_randomized

__version__ = "0.1.0"
