"""Data model for multi-event contests.

A contest is a finite schedule of time slots, each holding one or more
events. Every event has a finite outcome space, a set of participating
contestants and a set of scalar covariates. Applications plug in three
behaviours: an outcome model, an optional covariate generator that reacts
to realized outcomes, and a reward function evaluated once the whole
schedule is resolved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping, Optional, Protocol, Sequence

import numpy as np

EventId = str
ContestantId = str
OutcomeLabel = str
RewardLabel = str

PROB_TOL = 1e-9


class ContestError(ValueError):
    """Raised for malformed contests or illegal state transitions."""


class ContractViolation(ContestError):
    """An application-supplied model, generator or reward broke its contract."""


class PathLimitExceeded(ContestError):
    """Exact enumeration would visit more paths than allowed."""


# --------------------------------------------------------------------------
# covariates


CovariateKey = tuple  # (feature name, contestant id or None)


def _as_key(key: Any) -> CovariateKey:
    if isinstance(key, tuple):
        if len(key) != 2:
            raise ContestError(f"covariate key must be (name, contestant), got {key!r}")
        return key
    return (str(key), None)


class CovariateSet(Mapping):
    """Immutable mapping ``(name, contestant | None) -> float``.

    Plain string keys are accepted on construction and stand for
    contestant-independent features.
    """

    __slots__ = ("_data", "_hash")

    def __init__(self, values: Optional[Mapping[Any, float]] = None):
        data = {}
        for key, value in (values or {}).items():
            key = _as_key(key)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ContestError(f"covariate {key!r} must be a real number, got {value!r}") from None
            if not math.isfinite(value):
                raise ContestError(f"covariate {key!r} is not finite: {value}")
            data[key] = value
        self._data = data
        self._hash = None

    def __getitem__(self, key):
        return self._data[_as_key(key)]

    def __iter__(self) -> Iterator[CovariateKey]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._data.items()))
        return self._hash

    def __eq__(self, other):
        if isinstance(other, CovariateSet):
            return self._data == other._data
        return NotImplemented

    def __repr__(self):
        return f"CovariateSet({self._data!r})"

    def get(self, name, contestant=None, default=None):
        return self._data.get((name, contestant), default)

    def merged(self, updates: Mapping[Any, float]) -> "CovariateSet":
        """Return a copy with ``updates`` overriding existing keys."""
        out = dict(self._data)
        out.update({_as_key(k): v for k, v in updates.items()})
        return CovariateSet(out)


EMPTY_COVARIATES = CovariateSet()


# --------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class TimeSlot:
    index: int
    events: tuple[EventId, ...]

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))


@dataclass(frozen=True)
class ContestSchedule:
    """Ordered time slots. Structural checks live in :meth:`problems`."""

    slots: tuple[TimeSlot, ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))

    @classmethod
    def from_lists(cls, groups: Sequence[Sequence[EventId]], start: int = 1) -> "ContestSchedule":
        return cls(tuple(TimeSlot(start + i, tuple(g)) for i, g in enumerate(groups)))

    def __len__(self) -> int:
        return len(self.slots)

    def __iter__(self) -> Iterator[TimeSlot]:
        return iter(self.slots)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(s.index for s in self.slots)

    @property
    def events(self) -> tuple[EventId, ...]:
        return tuple(e for s in self.slots for e in s.events)

    def slot(self, t: int) -> TimeSlot:
        for s in self.slots:
            if s.index == t:
                return s
        raise ContestError(f"no time slot with index {t}")

    def position(self, t: int) -> int:
        for i, s in enumerate(self.slots):
            if s.index == t:
                return i
        raise ContestError(f"no time slot with index {t}")

    def slot_of(self, event: EventId) -> int:
        for s in self.slots:
            if event in s.events:
                return s.index
        raise ContestError(f"event {event!r} is not scheduled")

    def problems(self) -> list[str]:
        out = []
        if not self.slots:
            out.append("schedule is empty")
        idx = self.indices
        if any(b <= a for a, b in zip(idx, idx[1:])):
            out.append("slot indices are not strictly increasing")
        seen = set()
        for s in self.slots:
            if not s.events:
                out.append(f"slot {s.index} holds no events")
            for e in s.events:
                if e in seen:
                    out.append(f"duplicate event {e!r}")
                seen.add(e)
        return out


def sub_schedule(schedule: ContestSchedule, t: int, side: str) -> ContestSchedule:
    """Slots up to and including ``t`` (``side="before"``) or strictly after it."""
    schedule.position(t)
    if side == "before":
        return ContestSchedule(tuple(s for s in schedule.slots if s.index <= t))
    if side == "after":
        return ContestSchedule(tuple(s for s in schedule.slots if s.index > t))
    raise ContestError(f"side must be 'before' or 'after', got {side!r}")


# --------------------------------------------------------------------------
# events, outcomes, rewards


@dataclass(frozen=True)
class Event:
    id: EventId
    participants: tuple[ContestantId, ...]
    outcome_space: tuple[OutcomeLabel, ...]
    covariates: CovariateSet = EMPTY_COVARIATES

    def __post_init__(self):
        object.__setattr__(self, "participants", tuple(self.participants))
        object.__setattr__(self, "outcome_space", tuple(self.outcome_space))
        if not isinstance(self.covariates, CovariateSet):
            object.__setattr__(self, "covariates", CovariateSet(self.covariates))

    def outcome_index(self, outcome: OutcomeLabel) -> int:
        try:
            return self.outcome_space.index(outcome)
        except ValueError:
            raise ContestError(
                f"outcome {outcome!r} not in outcome space of {self.id!r}: {self.outcome_space}"
            ) from None


@dataclass(frozen=True)
class OutcomeRecord:
    event: EventId
    outcome: OutcomeLabel
    detail: Any = None


@dataclass(frozen=True)
class RewardDistribution:
    """Probability mass over a finite, ordered set of reward labels."""

    mass: Mapping[RewardLabel, float]

    def __post_init__(self):
        mass = {str(k): float(v) for k, v in dict(self.mass).items()}
        if not mass:
            raise ContestError("reward distribution needs at least one label")
        if any(v < 0 or not math.isfinite(v) for v in mass.values()):
            raise ContestError(f"negative or non-finite probability in {mass}")
        total = sum(mass.values())
        if abs(total - 1.0) > PROB_TOL:
            raise ContestError(f"reward probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "mass", MappingProxyType(mass))

    @classmethod
    def from_counts(cls, labels: Sequence[RewardLabel], counts) -> "RewardDistribution":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ContestError("cannot build a distribution from zero counts")
        probs = counts / total
        return cls(dict(zip(labels, probs.tolist())))

    @classmethod
    def point_mass(cls, label: RewardLabel, labels: Sequence[RewardLabel]) -> "RewardDistribution":
        return cls({lab: float(lab == label) for lab in labels})

    @property
    def labels(self) -> tuple[RewardLabel, ...]:
        return tuple(self.mass)

    def prob(self, label: RewardLabel) -> float:
        return self.mass.get(label, 0.0)

    def as_array(self, labels: Optional[Sequence[RewardLabel]] = None) -> np.ndarray:
        labels = self.labels if labels is None else labels
        return np.array([self.mass.get(lab, 0.0) for lab in labels])


def check_probability_vector(probs, event: Event) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.shape != (len(event.outcome_space),):
        raise ContractViolation(
            f"outcome model returned {p.shape[0] if p.ndim == 1 else p.shape} probabilities "
            f"for event {event.id!r} with {len(event.outcome_space)} outcomes"
        )
    if not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
        raise ContractViolation(f"invalid probability vector {p.tolist()} for event {event.id!r}")
    return p


# --------------------------------------------------------------------------
# contracts implemented by applications


class OutcomeModel(Protocol):
    """``probabilities`` must be pure. ``consumes_ei`` marks models that read
    event-importance covariates named ``ei_<contestant>``."""

    consumes_ei: bool

    def probabilities(self, event: Event, covariates: CovariateSet) -> Sequence[float]: ...


@dataclass(frozen=True)
class Amendment:
    """Output of a covariate generator: an optional replacement for the future
    part of the schedule, and covariate updates keyed by event."""

    schedule_tail: Optional[tuple[TimeSlot, ...]] = None
    covariates: Mapping[EventId, Mapping[Any, float]] = field(default_factory=dict)


class CovariateGenerator(Protocol):
    def generate(
        self,
        schedule_so_far: ContestSchedule,
        covariates_so_far: Mapping[EventId, CovariateSet],
        outcomes_so_far: Mapping[EventId, OutcomeRecord],
    ) -> Amendment: ...


class RewardFunction:
    """Maps a fully resolved contest to one reward label per contestant.

    Subclasses implement :meth:`rewards`. Reward functions with internal
    randomness override :meth:`lottery` as well so that exact enumeration
    can integrate over it; :meth:`rewards` must then draw from ``rng``.
    """

    labels: tuple[RewardLabel, ...] = ()

    def rewards(
        self, outcomes: Mapping[EventId, OutcomeRecord], rng: Optional[np.random.Generator] = None
    ) -> Mapping[ContestantId, RewardLabel]:
        raise NotImplementedError

    def reward(self, outcomes, contestant: ContestantId, rng=None) -> RewardLabel:
        return self.rewards(outcomes, rng)[contestant]

    def lottery(self, outcomes) -> list[tuple[float, Mapping[ContestantId, RewardLabel]]]:
        return [(1.0, self.rewards(outcomes, None))]


class BatchSampler(Protocol):
    """Optional fast path: simulate ``n`` completions of ``state`` with the
    events in ``fixed`` forced to the given outcome indices, returning reward
    label counts of shape (n_contestants, n_labels)."""

    def sample_counts(
        self, state: "ContestState", fixed: Mapping[EventId, int], n: int, rng: np.random.Generator
    ) -> np.ndarray: ...


# --------------------------------------------------------------------------
# contest definition and state


@dataclass(frozen=True, eq=False)
class ContestDefinition:
    contestants: tuple[ContestantId, ...]
    events: Mapping[EventId, Event]
    schedule: ContestSchedule
    outcome_model: Any
    reward_fn: RewardFunction
    generator: Any = None
    sampler: Any = None
    name: str = "contest"

    def __post_init__(self):
        object.__setattr__(self, "contestants", tuple(self.contestants))
        if not isinstance(self.events, MappingProxyType):
            object.__setattr__(self, "events", MappingProxyType(dict(self.events)))
        object.__setattr__(
            self, "_event_index", {e: i for i, e in enumerate(self.events)}
        )
        object.__setattr__(
            self, "_contestant_index", {k: i for i, k in enumerate(self.contestants)}
        )

    @property
    def reward_labels(self) -> tuple[RewardLabel, ...]:
        return tuple(self.reward_fn.labels)

    def event_index(self, event: EventId) -> int:
        return self._event_index[event]

    def contestant_index(self, contestant: ContestantId) -> int:
        try:
            return self._contestant_index[contestant]
        except KeyError:
            raise ContestError(f"unknown contestant {contestant!r}") from None

    def with_model(self, model) -> "ContestDefinition":
        return replace(self, outcome_model=model)

    def with_event_covariates(self, updates: Mapping[EventId, Mapping[Any, float]]) -> "ContestDefinition":
        events = dict(self.events)
        for eid, values in updates.items():
            ev = events[eid]
            events[eid] = replace(ev, covariates=ev.covariates.merged(values))
        return replace(self, events=events)

    def initial_state(self) -> "ContestState":
        return ContestState(
            contest=self,
            schedule=self.schedule,
            covariates=MappingProxyType({e: ev.covariates for e, ev in self.events.items()}),
            outcomes=MappingProxyType({}),
        )


def validate_contest(contest: ContestDefinition) -> list[str]:
    """List every structural problem found; an empty list means well-formed."""
    report = list(contest.schedule.problems())
    known = set(contest.contestants)
    if len(known) != len(contest.contestants):
        report.append("duplicate contestant ids")
    scheduled = set(contest.schedule.events)
    for eid, ev in contest.events.items():
        if ev.id != eid:
            report.append(f"event keyed {eid!r} carries id {ev.id!r}")
        if len(ev.outcome_space) < 2:
            report.append(f"event {eid!r}: outcome space < 2")
        if len(set(ev.outcome_space)) != len(ev.outcome_space):
            report.append(f"event {eid!r}: duplicate outcome labels")
        if not ev.participants:
            report.append(f"event {eid!r}: no participants")
        for k in ev.participants:
            if k not in known:
                report.append(f"event {eid!r}: unknown contestant {k!r}")
        if eid not in scheduled:
            report.append(f"event {eid!r} is not scheduled")
    for eid in scheduled:
        if eid not in contest.events:
            report.append(f"scheduled event {eid!r} is not defined")
    if not contest.reward_labels:
        report.append("reward function declares no labels")
    return report


def ensure_valid(contest: ContestDefinition) -> None:
    report = validate_contest(contest)
    if report:
        raise ContestError("malformed contest: " + "; ".join(report))


@dataclass(frozen=True, eq=False)
class ContestState:
    """Immutable snapshot: current schedule, covariates and realized outcomes."""

    contest: ContestDefinition
    schedule: ContestSchedule
    covariates: Mapping[EventId, CovariateSet]
    outcomes: Mapping[EventId, OutcomeRecord]

    @property
    def resolved(self) -> frozenset:
        return frozenset(self.outcomes)

    @property
    def unresolved(self) -> tuple[EventId, ...]:
        return tuple(e for e in self.schedule.events if e not in self.outcomes)

    @property
    def is_complete(self) -> bool:
        return all(e in self.outcomes for e in self.schedule.events)

    def current_slot(self) -> Optional[TimeSlot]:
        """First slot that still holds an unresolved event."""
        for s in self.schedule.slots:
            if any(e not in self.outcomes for e in s.events):
                return s
        return None

    def remaining_slots(self) -> tuple[TimeSlot, ...]:
        return tuple(s for s in self.schedule.slots if any(e not in self.outcomes for e in s.events))

    def event(self, event: EventId) -> Event:
        return self.contest.events[event]

    def probabilities(self, event: EventId, model=None) -> np.ndarray:
        model = self.contest.outcome_model if model is None else model
        ev = self.contest.events[event]
        return check_probability_vector(model.probabilities(ev, self.covariates[event]), ev)

    def apply_outcome(self, record: OutcomeRecord) -> "ContestState":
        """Record one outcome; runs the generator once the slot is complete."""
        ev = self.contest.events.get(record.event)
        if ev is None:
            raise ContestError(f"unknown event {record.event!r}")
        if record.event in self.outcomes:
            raise ContestError(f"event {record.event!r} is already resolved")
        ev.outcome_index(record.outcome)
        slot = self.current_slot()
        if slot is None or record.event not in slot.events:
            raise ContestError(f"event {record.event!r} is not in the current slot")
        outcomes = dict(self.outcomes)
        outcomes[record.event] = record
        state = replace(self, outcomes=MappingProxyType(outcomes))
        if all(e in outcomes for e in slot.events):
            state = state._run_generator(slot)
        return state

    def apply_slot(self, records: Iterable[OutcomeRecord]) -> "ContestState":
        state = self
        for r in records:
            state = state.apply_outcome(r)
        return state

    def _run_generator(self, slot: TimeSlot) -> "ContestState":
        gen = self.contest.generator
        if gen is None:
            return self
        past = sub_schedule(self.schedule, slot.index, "before")
        past_events = set(past.events)
        amendment = gen.generate(
            past,
            MappingProxyType({e: c for e, c in self.covariates.items() if e in past_events}),
            self.outcomes,
        )
        schedule = self.schedule
        if amendment.schedule_tail is not None:
            tail = tuple(amendment.schedule_tail)
            for s in tail:
                if s.index <= slot.index:
                    raise ContractViolation(
                        f"generator amended slot {s.index}, not after realized slot {slot.index}"
                    )
                for e in s.events:
                    if e in self.outcomes or e not in self.contest.events:
                        raise ContractViolation(f"generator scheduled invalid event {e!r}")
            schedule = ContestSchedule(past.slots + tail)
            problems = schedule.problems()
            if problems:
                raise ContractViolation("generator produced a bad schedule: " + "; ".join(problems))
        covariates = dict(self.covariates)
        for eid, values in amendment.covariates.items():
            if eid in self.outcomes:
                raise ContractViolation(f"generator rewrote covariates of resolved event {eid!r}")
            covariates[eid] = covariates[eid].merged(values)
        return replace(self, schedule=schedule, covariates=MappingProxyType(covariates))


def replay(contest: ContestDefinition, outcomes: Mapping[EventId, OutcomeRecord]) -> list[ContestState]:
    """States before each slot when ``outcomes`` are applied in schedule order.

    Returns one state per slot of the final schedule plus the terminal state;
    replay stops early at the first slot without a full set of outcomes.
    """
    state = contest.initial_state()
    states = [state]
    while True:
        slot = state.current_slot()
        if slot is None or not all(e in outcomes for e in slot.events):
            break
        state = state.apply_slot(outcomes[e] for e in slot.events)
        states.append(state)
    return states
