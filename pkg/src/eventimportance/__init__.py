"""Event importance in multi-event contests."""

from .core import (
    ContestDefinition,
    ContestError,
    ContestSchedule,
    ContestState,
    ContractViolation,
    CovariateSet,
    Event,
    OutcomeRecord,
    PathLimitExceeded,
    RewardDistribution,
    RewardFunction,
    TimeSlot,
    sub_schedule,
    validate_contest,
)
from .distance import shannon_entropy, total_variation, weighted_jsd, win_prob_difference
from .engine import (
    EIRecord,
    SimulationConfig,
    backward_sweep,
    conditional_reward_distribution,
    event_importance,
    event_importances,
    exact_enumeration,
    iterative_ei,
    simulate_remainder,
)

__version__ = "0.1.0"

__all__ = [
    "ContestDefinition",
    "ContestError",
    "ContestSchedule",
    "ContestState",
    "ContractViolation",
    "CovariateSet",
    "EIRecord",
    "Event",
    "OutcomeRecord",
    "PathLimitExceeded",
    "RewardDistribution",
    "RewardFunction",
    "SimulationConfig",
    "TimeSlot",
    "backward_sweep",
    "conditional_reward_distribution",
    "event_importance",
    "event_importances",
    "exact_enumeration",
    "iterative_ei",
    "shannon_entropy",
    "simulate_remainder",
    "sub_schedule",
    "total_variation",
    "validate_contest",
    "weighted_jsd",
    "win_prob_difference",
]
