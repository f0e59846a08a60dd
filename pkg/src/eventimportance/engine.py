"""Monte Carlo estimation of event importance.

For an event ``e`` and contestant ``k`` the engine fixes each possible
outcome of ``e`` in turn, simulates the rest of the contest ``n_mc`` times
and compares the resulting end-of-contest reward distributions of ``k``
with a distance function weighted by the outcome probabilities of ``e``.

Random numbers come from counter-based Philox streams keyed by
``(seed, *stream, iteration, event, outcome, block)``. Paths are simulated
in fixed-size blocks, so results do not depend on how many worker threads
process those blocks.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import (
    ContestDefinition,
    ContestError,
    ContestState,
    ContractViolation,
    EventId,
    OutcomeRecord,
    PathLimitExceeded,
    RewardDistribution,
    ensure_valid,
    replay,
)
from .distance import DISTANCES, family_from_arrays, get_distance

log = logging.getLogger(__name__)

PATH_BLOCK = 2500
MAX_ENUMERATION_PATHS = 10**6
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class SimulationConfig:
    n_mc: int = 7500
    seed: int = 0
    iterations: int = 3
    distance: str = "jsd"
    reuse_paths: bool = True
    target_label: Optional[str] = None
    threads: Optional[int] = None
    stream: tuple[int, ...] = ()

    def __post_init__(self):
        if int(self.n_mc) < 1:
            raise ContestError(f"n_mc must be >= 1, got {self.n_mc}")
        if int(self.iterations) < 1:
            raise ContestError(f"iterations must be >= 1, got {self.iterations}")
        if self.distance not in DISTANCES:
            raise ContestError(f"unknown distance {self.distance!r}; choose from {', '.join(DISTANCES)}")
        if self.distance == "winprob" and self.target_label is None:
            raise ContestError("the winprob distance needs target_label")
        object.__setattr__(self, "stream", tuple(int(s) for s in self.stream))

    def metric(self):
        return get_distance(self.distance, self.target_label)


@dataclass(frozen=True)
class EIRecord:
    event: EventId
    contestant: str
    value: float
    iteration: int
    n_mc_effective: int


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        env = os.environ.get("EI_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for ``key`` under the root ``seed``."""
    seq = np.random.SeedSequence(entropy=int(seed) & _SEED_MASK, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def stream_rng(config: SimulationConfig, *key: int) -> np.random.Generator:
    return derived_rng(config.seed, *config.stream, *key)


def path_blocks(n: int) -> list[int]:
    full, rest = divmod(n, PATH_BLOCK)
    return [PATH_BLOCK] * full + ([rest] if rest else [])


def _pmap(fn, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# path simulation


def _draw_slot(state: ContestState, rng, fixed: Mapping[EventId, int]) -> ContestState:
    slot = state.current_slot()
    contest = state.contest
    model = contest.outcome_model
    sample_detail = getattr(model, "sample_detail", None)
    records = []
    for e in slot.events:
        if e in state.outcomes:
            continue
        ev = contest.events[e]
        if e in fixed:
            y = fixed[e]
        else:
            y = int(rng.choice(len(ev.outcome_space), p=state.probabilities(e)))
        label = ev.outcome_space[y]
        detail = sample_detail(ev, label, rng) if sample_detail is not None else None
        records.append(OutcomeRecord(e, label, detail))
    return state.apply_slot(records)


def simulate_remainder(
    state: ContestState, rng: np.random.Generator, fixed: Optional[Mapping[EventId, int]] = None
) -> dict:
    """Resolve every open event along one random path and return all outcomes."""
    fixed = fixed or {}
    while state.current_slot() is not None:
        state = _draw_slot(state, rng, fixed)
    return dict(state.outcomes)


def _generic_counts(state: ContestState, fixed: Mapping[EventId, int], n: int, rng) -> np.ndarray:
    # Paths sharing a history are carried as one group and split multinomially,
    # which has the same law as drawing each path independently.
    contest = state.contest
    labels = contest.reward_labels
    label_idx = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(contest.contestants), len(labels)))
    model = contest.outcome_model
    sample_detail = getattr(model, "sample_detail", None)
    stack = [(state, n)]
    while stack:
        s, c = stack.pop()
        slot = s.current_slot()
        if slot is None:
            lottery = contest.reward_fn.lottery(s.outcomes)
            split = [c] if len(lottery) == 1 else rng.multinomial(c, [p for p, _ in lottery])
            for (_, assignment), m in zip(lottery, split):
                if m:
                    for k, lab in assignment.items():
                        counts[contest.contestant_index(k), label_idx[lab]] += m
            continue
        pending = [e for e in slot.events if e not in s.outcomes]
        groups = [((), c)]
        for e in pending:
            ev = contest.events[e]
            if e in fixed:
                groups = [(outs + (fixed[e],), m) for outs, m in groups]
                continue
            p = s.probabilities(e)
            nxt = []
            for outs, m in groups:
                for y, my in enumerate(rng.multinomial(m, p)):
                    if my:
                        nxt.append((outs + (y,), int(my)))
            groups = nxt
        for outs, m in groups:
            if sample_detail is None:
                recs = [
                    OutcomeRecord(e, contest.events[e].outcome_space[y]) for e, y in zip(pending, outs)
                ]
                stack.append((s.apply_slot(recs), m))
            else:
                for _ in range(m):
                    recs = []
                    for e, y in zip(pending, outs):
                        ev = contest.events[e]
                        label = ev.outcome_space[y]
                        recs.append(OutcomeRecord(e, label, sample_detail(ev, label, rng)))
                    stack.append((s.apply_slot(recs), 1))
    return counts


def sample_reward_counts(
    state: ContestState, fixed: Mapping[EventId, int], n: int, rng: np.random.Generator
) -> np.ndarray:
    """Reward label counts, shape (contestants, labels), over ``n`` simulated completions."""
    sampler = state.contest.sampler
    if sampler is not None:
        return np.asarray(sampler.sample_counts(state, fixed, n, rng), dtype=float)
    return _generic_counts(state, fixed, n, rng)


# --------------------------------------------------------------------------
# conditional distributions and event importance


@dataclass
class _Branch:
    probs: np.ndarray  # (contestants, labels)
    n_paths: int


def _check_open(state: ContestState, event: EventId) -> None:
    if event not in state.contest.events:
        raise ContestError(f"unknown event {event!r}")
    if event in state.outcomes:
        raise ContestError(f"event {event!r} is already resolved")
    if event not in state.schedule.events:
        raise ContestError(f"event {event!r} is not scheduled")


def _simulate_branches(
    state: ContestState,
    branches: Sequence[tuple[EventId, int]],
    config: SimulationConfig,
    iteration: int,
) -> dict:
    contest = state.contest
    tasks = []
    for e, y in branches:
        ev_idx = contest.event_index(e)
        for b, size in enumerate(path_blocks(config.n_mc)):
            tasks.append((e, y, ev_idx, b, size))

    def run(task):
        e, y, ev_idx, b, size = task
        rng = stream_rng(config, iteration, ev_idx, y, b)
        return sample_reward_counts(state, {e: y}, size, rng)

    results = _pmap(run, tasks, resolve_threads(config.threads))
    out = {}
    for (e, y, *_), counts in zip(tasks, results):
        if (e, y) in out:
            out[(e, y)] = out[(e, y)] + counts
        else:
            out[(e, y)] = counts
    return {key: _Branch(c / config.n_mc, config.n_mc) for key, c in out.items()}


def conditional_reward_distribution(
    state: ContestState,
    event: EventId,
    outcome: str,
    contestant: str,
    config: SimulationConfig,
    rng: Optional[np.random.Generator] = None,
    iteration: int = 1,
) -> RewardDistribution:
    """Empirical reward distribution of ``contestant`` given ``event`` -> ``outcome``.

    With an explicit ``rng`` all paths are drawn from it; otherwise the
    configured counter-based streams are used.
    """
    _check_open(state, event)
    contest = state.contest
    y = contest.events[event].outcome_index(outcome)
    k = contest.contestant_index(contestant)
    if rng is not None:
        probs = sample_reward_counts(state, {event: y}, config.n_mc, rng)[k] / config.n_mc
    else:
        probs = _simulate_branches(state, [(event, y)], config, iteration)[(event, y)].probs[k]
    return RewardDistribution(dict(zip(contest.reward_labels, probs.tolist())))


def _records_for_event(
    state: ContestState,
    event: EventId,
    branches: Mapping[tuple[EventId, int], _Branch],
    config: SimulationConfig,
    iteration: int,
    contestants: Optional[Iterable[str]] = None,
) -> list[EIRecord]:
    contest = state.contest
    ev = contest.events[event]
    weights = state.probabilities(event)
    metric = config.metric()
    labels = contest.reward_labels
    n_eff = max(branches[(event, y)].n_paths for y in range(len(ev.outcome_space)))
    out = []
    for k in (ev.participants if contestants is None else contestants):
        kidx = contest.contestant_index(k)
        rows = [branches[(event, y)].probs[kidx] for y in range(len(ev.outcome_space))]
        value = metric(family_from_arrays(labels, rows, weights))
        out.append(EIRecord(event, k, value, iteration, n_eff))
    return out


def event_importance(
    state: ContestState, event: EventId, contestant: str, config: SimulationConfig, iteration: int = 1
) -> EIRecord:
    _check_open(state, event)
    state.contest.contestant_index(contestant)
    ev = state.contest.events[event]
    branches = _simulate_branches(state, [(event, y) for y in range(len(ev.outcome_space))], config, iteration)
    return _records_for_event(state, event, branches, config, iteration, [contestant])[0]


def event_importances(
    state: ContestState,
    events: Optional[Sequence[EventId]] = None,
    config: SimulationConfig = SimulationConfig(),
    iteration: int = 1,
) -> list[EIRecord]:
    """EI for every participant of each listed event (default: the current slot)."""
    if events is None:
        slot = state.current_slot()
        events = [] if slot is None else [e for e in slot.events if e not in state.outcomes]
    for e in events:
        _check_open(state, e)
    todo = [(e, y) for e in events for y in range(len(state.contest.events[e].outcome_space))]
    branches = _simulate_branches(state, todo, config, iteration)
    out = []
    for e in events:
        out.extend(_records_for_event(state, e, branches, config, iteration))
    return out


# --------------------------------------------------------------------------
# backward sweep over a realized contest


@dataclass
class PathCache:
    """Per slot position: the reward distribution given the realized history
    before that slot, as a probability-weighted mixture of the slot's
    conditional distributions, and the number of paths behind it."""

    entries: dict = field(default_factory=dict)

    def put(self, position: int, probs: np.ndarray, n_paths: int) -> None:
        self.entries[position] = _Branch(probs, n_paths)

    def get(self, position: int) -> Optional[_Branch]:
        return self.entries.get(position)


def _history_states(history: ContestState) -> tuple[list[ContestState], ContestState]:
    if not history.is_complete:
        missing = history.unresolved
        raise ContestError(f"history has unrealized events: {', '.join(missing[:5])}")
    states = replay(history.contest, history.outcomes)
    final = states[-1]
    if not final.is_complete:
        raise ContestError("history could not be replayed slot by slot")
    return states, final


def backward_sweep(
    history: ContestState,
    config: SimulationConfig,
    iteration: int = 1,
    slots: Optional[Iterable[int]] = None,
    cache: Optional[PathCache] = None,
) -> list[EIRecord]:
    """EI for every event of a fully realized contest, last slot first.

    ``slots`` restricts the sweep to the given slot indices. With
    ``config.reuse_paths`` a sole event whose hypothesized outcome equals
    its realized outcome reuses the cached distribution of the next slot.
    """
    states, final = _history_states(history)
    schedule = final.schedule
    wanted = None if slots is None else set(slots)
    cache = PathCache() if cache is None else cache
    last = len(schedule.slots) - 1
    by_position = {}
    for pos in range(last, -1, -1):
        slot = schedule.slots[pos]
        if wanted is not None and slot.index not in wanted:
            continue
        state = states[pos]
        contest = state.contest
        todo, reused = [], {}
        for e in slot.events:
            realized = contest.events[e].outcome_index(history.outcomes[e].outcome)
            for y in range(len(contest.events[e].outcome_space)):
                hit = None
                if config.reuse_paths and pos != last and len(slot.events) == 1 and y == realized:
                    hit = cache.get(pos + 1)
                if hit is not None:
                    reused[(e, y)] = hit
                else:
                    todo.append((e, y))
        branches = _simulate_branches(state, todo, config, iteration)
        branches.update(reused)
        records = []
        mixtures, n_total = [], 0
        for e in slot.events:
            records.extend(_records_for_event(state, e, branches, config, iteration))
            w = state.probabilities(e)
            n_out = len(contest.events[e].outcome_space)
            mixtures.append(sum(w[y] * branches[(e, y)].probs for y in range(n_out)))
            n_total += sum(branches[(e, y)].n_paths for y in range(n_out))
        cache.put(pos, sum(mixtures) / len(mixtures), n_total)
        by_position[pos] = records
        log.debug("slot %s done (%d events, %d reused branches)", slot.index, len(slot.events), len(reused))
    return [r for pos in sorted(by_position) for r in by_position[pos]]


def ei_covariate_name(contestant: str) -> str:
    return f"ei_{contestant}"


def iterative_ei(
    history: ContestState,
    config: SimulationConfig,
    baseline_model=None,
    slots: Optional[Iterable[int]] = None,
) -> list[list[EIRecord]]:
    """Repeated backward sweeps; from the second round on each event carries the
    previous round's EI of its participants as ``ei_<contestant>`` covariates.

    The first round uses ``baseline_model`` when given, otherwise the contest's
    own model, which must then not consume EI covariates.
    """
    contest = history.contest
    ensure_valid(contest)
    first = contest.outcome_model if baseline_model is None else baseline_model
    if getattr(first, "consumes_ei", False):
        raise ContractViolation(
            "the first iteration runs without EI covariates, but the outcome model consumes them"
        )
    slots = None if slots is None else list(slots)
    rounds: list[list[EIRecord]] = []
    for it in range(1, config.iterations + 1):
        if it == 1:
            current = contest.with_model(first)
        else:
            updates: dict = {}
            for rec in rounds[-1]:
                updates.setdefault(rec.event, {})[ei_covariate_name(rec.contestant)] = rec.value
            current = contest.with_event_covariates(updates)
        realized = replace_contest(history, current)
        rounds.append(backward_sweep(realized, config, iteration=it, slots=slots))
        log.info("iteration %d finished: %d records", it, len(rounds[-1]))
    return rounds


def replace_contest(history: ContestState, contest: ContestDefinition) -> ContestState:
    """The realized ``history`` re-applied on top of another contest definition."""
    return replay(contest, history.outcomes)[-1]


# --------------------------------------------------------------------------
# exact enumeration (test oracle)


def _path_bound(state: ContestState, fixed: Mapping[EventId, int]) -> int:
    bound = 1
    for e in state.unresolved:
        if e not in fixed:
            bound *= len(state.contest.events[e].outcome_space)
    return bound


def exact_reward_probabilities(
    state: ContestState,
    fixed: Optional[Mapping[EventId, int]] = None,
    max_paths: int = MAX_ENUMERATION_PATHS,
) -> np.ndarray:
    """Exact reward label probabilities, shape (contestants, labels)."""
    fixed = dict(fixed or {})
    bound = _path_bound(state, fixed)
    if bound > max_paths:
        raise PathLimitExceeded(
            f"{bound} outcome paths exceed the enumeration limit of {max_paths}; use a smaller contest"
        )
    contest = state.contest
    labels = {lab: i for i, lab in enumerate(contest.reward_labels)}
    acc = np.zeros((len(contest.contestants), len(labels)))
    visited = 0

    def walk(s: ContestState, p: float) -> None:
        nonlocal visited
        slot = s.current_slot()
        if slot is None:
            visited += 1
            if visited > max_paths:
                raise PathLimitExceeded(f"more than {max_paths} outcome paths")
            for q, assignment in contest.reward_fn.lottery(s.outcomes):
                for k, lab in assignment.items():
                    acc[contest.contestant_index(k), labels[lab]] += p * q
            return
        pending = [e for e in slot.events if e not in s.outcomes]
        options = []
        for e in pending:
            if e in fixed:
                options.append([(fixed[e], 1.0)])
            else:
                pr = s.probabilities(e)
                options.append([(y, float(q)) for y, q in enumerate(pr) if q > 0])
        for combo in itertools.product(*options):
            q = p * math.prod(w for _, w in combo)
            recs = [
                OutcomeRecord(e, contest.events[e].outcome_space[y]) for e, (y, _) in zip(pending, combo)
            ]
            walk(s.apply_slot(recs), q)

    walk(state, 1.0)
    return acc


def _as_state(obj: Union[ContestState, ContestDefinition]) -> ContestState:
    return obj.initial_state() if isinstance(obj, ContestDefinition) else obj


def exact_enumeration(
    contest: Union[ContestState, ContestDefinition],
    event: EventId,
    outcome: str,
    contestant: str,
    max_paths: int = MAX_ENUMERATION_PATHS,
) -> RewardDistribution:
    """Exact conditional reward distribution of ``contestant`` given ``event`` -> ``outcome``."""
    state = _as_state(contest)
    _check_open(state, event)
    c = state.contest
    y = c.events[event].outcome_index(outcome)
    probs = exact_reward_probabilities(state, {event: y}, max_paths)[c.contestant_index(contestant)]
    return RewardDistribution(dict(zip(c.reward_labels, probs.tolist())))


def exact_event_importance(
    contest: Union[ContestState, ContestDefinition],
    event: EventId,
    distance: str = "jsd",
    target_label: Optional[str] = None,
    max_paths: int = MAX_ENUMERATION_PATHS,
) -> dict:
    """Exact EI per participant of ``event``, keyed by contestant."""
    state = _as_state(contest)
    _check_open(state, event)
    c = state.contest
    ev = c.events[event]
    conditionals = [
        exact_reward_probabilities(state, {event: y}, max_paths) for y in range(len(ev.outcome_space))
    ]
    metric = get_distance(distance, target_label)
    weights = state.probabilities(event)
    out = {}
    for k in ev.participants:
        kidx = c.contestant_index(k)
        out[k] = metric(family_from_arrays(c.reward_labels, [cd[kidx] for cd in conditionals], weights))
    return out
