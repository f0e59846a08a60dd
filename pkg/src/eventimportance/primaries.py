"""Sequential two-candidate primaries with momentum.

Each election unit (state) is won outright by one of two candidates. The
win probability follows a binary conditional logit on systematic utility

    psi_i = eta_i + zeta_i - (rho_i - rho_s)^2 / 2

where eta is reputation, rho_i the candidate's position, rho_s the state's
preference and zeta the spillover from earlier results: the candidate's
share of all delegates decided so far minus the share implied by
reputation alone. A candidate is nominated with a strict majority of all
delegates.
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import (
    Amendment,
    ContestDefinition,
    ContestError,
    ContestSchedule,
    ContestState,
    Event,
    RewardFunction,
)
from .engine import SimulationConfig, derived_rng, event_importances

CANDIDATES = ("C0", "C1")
NOMINATED = "nominated"
NOT_NOMINATED = "not-nominated"
MODES = ("regular", "random", "rank_increase")

# stream domains under the root seed
_STUDY, _PREFERENCES, _PERMUTATION = 0, 1, 2


class DataError(ContestError):
    """Malformed input file."""


@dataclass(frozen=True)
class StateRecord:
    name: str
    date: _dt.date
    delegates: int

    def __post_init__(self):
        if int(self.delegates) < 1:
            raise DataError(f"{self.name}: delegates must be >= 1, got {self.delegates}")


@dataclass(frozen=True)
class CandidateParams:
    eta: tuple[float, float] = (0.5, 0.0)
    rho: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if len(self.eta) != 2 or len(self.rho) != 2:
            raise ContestError("exactly two candidates are supported")

    @property
    def reputation_share(self) -> float:
        """Delegate share of candidate 0 implied by reputation alone."""
        e0, e1 = self.eta
        return 1.0 / (1.0 + math.exp(e1 - e0))


def default_states_path() -> Path:
    return Path(str(resources.files("eventimportance") / "data" / "primaries_2020.csv"))


def load_states(path=None) -> list[StateRecord]:
    """Read ``name,date,delegates`` rows; errors carry the offending line number."""
    path = default_states_path() if path is None else Path(path)
    out, seen = [], set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"name", "date", "delegates"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}:1: missing columns {', '.join(sorted(missing))}")
        for row in reader:
            line = reader.line_num
            try:
                name = row["name"].strip()
                date = _dt.date.fromisoformat(row["date"].strip())
                rec = StateRecord(name, date, int(row["delegates"]))
            except (ValueError, AttributeError, DataError) as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
            if not name:
                raise DataError(f"{path}:{line}: empty name")
            if name in seen:
                raise DataError(f"{path}:{line}: duplicate state {name!r}")
            seen.add(name)
            out.append(rec)
    if not out:
        raise DataError(f"{path}: no states")
    return out


# --------------------------------------------------------------------------
# model pieces


def spillover(won: float, decided: float, params: CandidateParams, candidate: int = 0) -> float:
    """Spillover of ``candidate`` after it won ``won`` of ``decided`` delegates.

    ``won`` counts candidate 0's delegates. Zero when nothing is decided yet.
    """
    if decided <= 0:
        return 0.0
    z0 = won / decided - params.reputation_share
    return z0 if candidate == 0 else -z0


def utility_components(rho_s: float, candidate: int, zeta: float, params: CandidateParams) -> float:
    """Systematic utility of ``candidate`` in a state with preference ``rho_s``."""
    return params.eta[candidate] + zeta - (params.rho[candidate] - rho_s) ** 2 / 2.0


def win_probability(rho_s, zeta0, params: CandidateParams):
    """Probability that candidate 0 wins; vectorises over ``rho_s`` and ``zeta0``."""
    gap = (
        (params.eta[0] - params.eta[1])
        + 2.0 * np.asarray(zeta0, dtype=float)
        - ((params.rho[0] - np.asarray(rho_s, dtype=float)) ** 2 - (params.rho[1] - rho_s) ** 2) / 2.0
    )
    out = 1.0 / (1.0 + np.exp(-gap))
    return float(out) if np.ndim(out) == 0 else out


def nomination_reward(delegates_won: Sequence[float], total: float) -> dict:
    """Strict majority wins; an exact tie leaves both candidates without nomination."""
    labels = {}
    for k, won in zip(CANDIDATES, delegates_won):
        labels[k] = NOMINATED if 2 * won > total else NOT_NOMINATED
    return labels


# --------------------------------------------------------------------------
# schedules


def schedule_framework(states: Sequence[StateRecord]) -> list[int]:
    """Number of elections per distinct date, in date order."""
    dates = sorted({s.date for s in states})
    return [sum(1 for s in states if s.date == d) for d in dates]


def regular_order(states: Sequence[StateRecord]) -> list[StateRecord]:
    return sorted(states, key=lambda s: s.date)


def fill_framework(ordered: Sequence[str], sizes: Sequence[int]) -> ContestSchedule:
    if sum(sizes) != len(ordered):
        raise ContestError(f"framework holds {sum(sizes)} elections, got {len(ordered)}")
    groups, i = [], 0
    for size in sizes:
        groups.append(tuple(ordered[i : i + size]))
        i += size
    return ContestSchedule.from_lists(groups)


def build_schedule(
    states: Sequence[StateRecord], mode: str = "regular", rng: Optional[np.random.Generator] = None
) -> ContestSchedule:
    """Assign states to slots.

    ``regular`` groups states by election date. ``random`` and
    ``rank_increase`` keep the number of elections per date and only change
    which state sits where: a random permutation, or ascending delegate
    count (ties by name).
    """
    if not states:
        raise ContestError("no states to schedule")
    mode = mode.replace("-", "_")
    sizes = schedule_framework(states)
    if mode == "regular":
        names = [s.name for s in regular_order(states)]
    elif mode == "random":
        if rng is None:
            raise ContestError("random schedules need an rng")
        names = [states[i].name for i in rng.permutation(len(states))]
    elif mode == "rank_increase":
        names = [s.name for s in sorted(states, key=lambda s: (s.delegates, s.name))]
    else:
        raise ContestError(f"unknown schedule mode {mode!r}; choose from {', '.join(MODES)}")
    return fill_framework(names, sizes)


def positional_schedule(states: Sequence[StateRecord], state_name: str, position: int) -> ContestSchedule:
    """Regular ordering with ``state_name`` moved to 1-based ``position``."""
    order = [s.name for s in regular_order(states)]
    if state_name not in order:
        raise ContestError(f"unknown state {state_name!r}")
    if not 1 <= position <= len(order):
        raise ContestError(f"position must be in 1..{len(order)}, got {position}")
    order.remove(state_name)
    order.insert(position - 1, state_name)
    return fill_framework(order, schedule_framework(states))


# --------------------------------------------------------------------------
# contest wiring


class PrimariesModel:
    consumes_ei = False

    def __init__(self, params: CandidateParams = CandidateParams()):
        self.params = params

    def probabilities(self, event: Event, covariates) -> list[float]:
        p0 = win_probability(covariates["rho"], covariates.get("zeta", "C0", 0.0), self.params)
        return [p0, 1.0 - p0]


class SpilloverGenerator:
    """Recomputes every open election's spillover after each slot."""

    def __init__(self, delegates: Mapping[str, int], params: CandidateParams):
        self.delegates = dict(delegates)
        self.params = params

    def generate(self, schedule_so_far, covariates_so_far, outcomes_so_far) -> Amendment:
        won = sum(self.delegates[e] for e, r in outcomes_so_far.items() if r.outcome == CANDIDATES[0])
        decided = sum(self.delegates[e] for e in outcomes_so_far)
        z0 = spillover(won, decided, self.params)
        updates = {
            e: {("zeta", CANDIDATES[0]): z0, ("zeta", CANDIDATES[1]): -z0}
            for e in self.delegates
            if e not in outcomes_so_far
        }
        return Amendment(covariates=updates)


class NominationReward(RewardFunction):
    labels = (NOMINATED, NOT_NOMINATED)

    def __init__(self, delegates: Mapping[str, int]):
        self.delegates = dict(delegates)
        self.total = sum(self.delegates.values())

    def rewards(self, outcomes, rng=None):
        won = [0, 0]
        for e, r in outcomes.items():
            won[CANDIDATES.index(r.outcome)] += self.delegates[e]
        return nomination_reward(won, self.total)


class PrimariesSampler:
    """Vectorised completion of a primaries race over many paths at once."""

    def __init__(self, delegates: Mapping[str, int], params: CandidateParams):
        self.delegates = dict(delegates)
        self.total = sum(self.delegates.values())
        self.params = params

    def sample_counts(self, state: ContestState, fixed, n, rng) -> np.ndarray:
        dele = self.delegates
        remaining = state.remaining_slots()
        open_slots = {e for s in remaining for e in s.events}
        won = np.zeros(n)
        decided = 0.0
        for e, r in state.outcomes.items():
            if e not in open_slots:
                decided += dele[e]
                if r.outcome == CANDIDATES[0]:
                    won += dele[e]
        for slot in remaining:
            # spillover only moves between slots
            zeta0 = won / decided - self.params.reputation_share if decided > 0 else 0.0
            gained = np.zeros(n)
            for e in slot.events:
                if e in state.outcomes:
                    if state.outcomes[e].outcome == CANDIDATES[0]:
                        gained += dele[e]
                elif e in fixed:
                    if fixed[e] == 0:
                        gained += dele[e]
                else:
                    p0 = win_probability(state.covariates[e]["rho"], zeta0, self.params)
                    gained += (rng.random(n) < p0) * dele[e]
            won += gained
            decided += sum(dele[e] for e in slot.events)
        n0 = int((2 * won > self.total).sum())
        n1 = int((2 * (self.total - won) > self.total).sum())
        return np.array([[n0, n - n0], [n1, n - n1]], dtype=float)


def build_contest(
    states: Sequence[StateRecord],
    schedule: ContestSchedule,
    preferences: Mapping[str, float],
    params: CandidateParams = CandidateParams(),
    vectorised: bool = True,
) -> ContestDefinition:
    delegates = {s.name: s.delegates for s in states}
    events = {
        s.name: Event(
            s.name,
            CANDIDATES,
            CANDIDATES,
            {"rho": preferences[s.name], "delegates": s.delegates, ("zeta", "C0"): 0.0, ("zeta", "C1"): 0.0},
        )
        for s in states
    }
    return ContestDefinition(
        contestants=CANDIDATES,
        events=events,
        schedule=schedule,
        outcome_model=PrimariesModel(params),
        reward_fn=NominationReward(delegates),
        generator=SpilloverGenerator(delegates, params),
        sampler=PrimariesSampler(delegates, params) if vectorised else None,
        name="primaries",
    )


# --------------------------------------------------------------------------
# studies


@dataclass
class StudyResult:
    """Per-sample EI values, one column per state (candidate 0's record)."""

    mode: str
    names: tuple[str, ...]
    delegates: np.ndarray
    values: np.ndarray  # (samples, states)
    n_mc: int
    seed: int

    def mean(self) -> dict:
        return dict(zip(self.names, self.values.mean(axis=0).tolist()))

    def sd(self) -> dict:
        ddof = 1 if len(self.values) > 1 else 0
        return dict(zip(self.names, self.values.std(axis=0, ddof=ddof).tolist()))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def rows(self) -> list[dict]:
        mean, sd = self.mean(), self.sd()
        return [
            {
                "state": k,
                "mode": self.mode,
                "mean_ei": mean[k],
                "sd_ei": sd[k],
                "n_samples": len(self.values),
                "n_mc": self.n_mc,
                "seed": self.seed,
            }
            for k in self.names
        ]


def preference_sample(states: Sequence[StateRecord], seed: int, sample: int) -> dict:
    draws = derived_rng(seed, _PREFERENCES, sample).standard_normal(len(states))
    return {s.name: float(x) for s, x in zip(states, draws)}


def _sample_config(config: SimulationConfig, sample: int, extra: tuple = ()) -> SimulationConfig:
    return replace(
        config,
        distance="winprob",
        target_label=NOMINATED,
        stream=(*config.stream, _STUDY, *extra, sample),
    )


def sample_ei(
    states: Sequence[StateRecord],
    schedule: ContestSchedule,
    preferences: Mapping[str, float],
    config: SimulationConfig,
    params: CandidateParams = CandidateParams(),
    events: Optional[Sequence[str]] = None,
) -> dict:
    """EI of each election for candidate 0 from a fresh, undecided race."""
    contest = build_contest(states, schedule, preferences, params)
    state = contest.initial_state()
    events = list(schedule.events) if events is None else list(events)
    records = event_importances(state, events, config)
    return {r.event: r.value for r in records if r.contestant == CANDIDATES[0]}


def run_study(
    states: Sequence[StateRecord],
    mode: str,
    n_samples: int,
    config: SimulationConfig,
    params: CandidateParams = CandidateParams(),
    progress=None,
) -> StudyResult:
    """Mean EI per state over ``n_samples`` draws of state preferences."""
    if n_samples < 1:
        raise ContestError("n_samples must be >= 1")
    mode = mode.replace("-", "_")
    names = tuple(s.name for s in states)
    values = np.zeros((n_samples, len(states)))
    fixed_schedule = None if mode == "random" else build_schedule(states, mode)
    for i in range(n_samples):
        prefs = preference_sample(states, config.seed, i)
        schedule = fixed_schedule or build_schedule(states, mode, derived_rng(config.seed, _PERMUTATION, i))
        ei = sample_ei(states, schedule, prefs, _sample_config(config, i), params)
        values[i] = [ei[k] for k in names]
        if progress is not None:
            progress(i + 1, n_samples)
    return StudyResult(mode, names, np.array([s.delegates for s in states]), values, config.n_mc, config.seed)


def positional_study(
    states: Sequence[StateRecord],
    state_name: str,
    positions: Iterable[int],
    n_samples: int,
    config: SimulationConfig,
    params: CandidateParams = CandidateParams(),
) -> dict:
    """EI of ``state_name`` per preference sample at each hypothetical position.

    Preference draws are shared across positions and with :func:`run_study`
    for equal seeds, so position comparisons are paired.
    """
    if n_samples < 1:
        raise ContestError("n_samples must be >= 1")
    positions = list(positions)
    schedules = {p: positional_schedule(states, state_name, p) for p in positions}
    out = {p: np.zeros(n_samples) for p in positions}
    for i in range(n_samples):
        prefs = preference_sample(states, config.seed, i)
        for p in positions:
            cfg = _sample_config(config, i, extra=(p,))
            out[p][i] = sample_ei(states, schedules[p], prefs, cfg, params, [state_name])[state_name]
    return out
