"""Round-robin football leagues.

Matches are events with outcomes H, D and A. Outcome probabilities come
from an ordered logit on a latent index built from team strengths, a home
advantage and optional EI covariates. Exact scores are drawn from two
independent Poisson laws conditioned on the categorical outcome, since goal
difference and goals scored break ties in the final table. The final rank
maps to a reward region (champion, Champions League, Europa League, none,
relegation play-off, direct relegation), adjusted for national cup winners.
"""

from __future__ import annotations

import csv
import math
import threading
import weakref
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import (
    ContestDefinition,
    ContestError,
    ContestSchedule,
    ContestState,
    ContractViolation,
    Event,
    OutcomeRecord,
    RewardFunction,
    TimeSlot,
    replay,
)
from .engine import (
    EIRecord,
    SimulationConfig,
    ei_covariate_name,
    event_importances,
    iterative_ei,
)

OUTCOMES = ("H", "D", "A")
CHAMPION = "champion"
CHAMPIONS_LEAGUE = "champions-league"
EUROPA_LEAGUE = "europa-league"
NONE = "none"
PLAYOFF = "relegation-playoff"
RELEGATION = "direct-relegation"
REWARD_LABELS = (CHAMPION, CHAMPIONS_LEAGUE, EUROPA_LEAGUE, NONE, PLAYOFF, RELEGATION)
INTERNATIONAL = frozenset({CHAMPION, CHAMPIONS_LEAGUE, EUROPA_LEAGUE})

REWARD_CODES = (
    "4/3/DDD",
    "4/3/PDD",
    "3/3/DDD",
    "3/3/DD",
    "3/3/PDD",
    "3/3/PD",
    "2/4/DD",
    "2/3/DDD",
    "2/3/DD",
    "2/3/PPD",
    "2/2/DD",
    "2/2/PPD",
)

MAX_GOALS = 20
MAX_REJECTIONS = 10_000


class LeagueDataError(ContestError):
    """Inconsistent fixtures, standings or reward configuration."""


# --------------------------------------------------------------------------
# fixtures and schedule


@dataclass(frozen=True)
class Fixture:
    matchday: int
    home: str
    away: str
    goals_home: Optional[int] = None
    goals_away: Optional[int] = None

    def __post_init__(self):
        if self.home == self.away:
            raise LeagueDataError(f"matchday {self.matchday}: {self.home} cannot play itself")
        if (self.goals_home is None) != (self.goals_away is None):
            raise LeagueDataError(f"matchday {self.matchday}: {self.home}-{self.away} has half a score")
        for g in (self.goals_home, self.goals_away):
            if g is not None and (int(g) != g or g < 0):
                raise LeagueDataError(f"matchday {self.matchday}: invalid goal count {g!r}")

    @property
    def id(self) -> str:
        return f"{self.matchday}:{self.home}-{self.away}"

    @property
    def played(self) -> bool:
        return self.goals_home is not None

    @property
    def result(self) -> Optional[str]:
        if not self.played:
            return None
        return outcome_of_score(self.goals_home, self.goals_away)

    def with_score(self, goals_home: int, goals_away: int) -> "Fixture":
        return replace(self, goals_home=int(goals_home), goals_away=int(goals_away))


def outcome_of_score(goals_home: int, goals_away: int) -> str:
    if goals_home > goals_away:
        return "H"
    return "D" if goals_home == goals_away else "A"


def generate_round_robin(teams: Sequence[str], double: bool = True, rng=None) -> list[Fixture]:
    """Circle-method schedule; the second half mirrors the first with venues swapped.

    With ``rng`` the team order is shuffled before the circle is laid out.
    """
    teams = list(teams)
    n = len(teams)
    if n < 2 or n % 2:
        raise LeagueDataError(f"round robin needs an even number of teams >= 2, got {n}")
    if len(set(teams)) != n:
        raise LeagueDataError("duplicate team names")
    if rng is not None:
        teams = [teams[i] for i in rng.permutation(n)]
    circle = list(range(n))
    first = []
    for rnd in range(n - 1):
        for i in range(n // 2):
            a, b = circle[i], circle[n - 1 - i]
            # alternate venues so no team is stuck at home
            if (i == 0 and rnd % 2 == 1) or (i > 0 and i % 2 == 1):
                a, b = b, a
            first.append(Fixture(rnd + 1, teams[a], teams[b]))
        circle = [circle[0], circle[-1]] + circle[1:-1]
    if not double:
        return first
    second = [Fixture(f.matchday + n - 1, f.away, f.home) for f in first]
    return first + second


def generate_double_round_robin(teams: Sequence[str], rng=None) -> list[Fixture]:
    return generate_round_robin(teams, double=True, rng=rng)


@dataclass(frozen=True)
class Standing:
    points: int = 0
    goal_difference: int = 0
    goals_for: int = 0


@dataclass
class SeasonState:
    """Teams, fixtures and standings carried over from before the first listed fixture."""

    teams: tuple[str, ...]
    fixtures: list[Fixture]
    base: dict = field(default_factory=dict)

    def __post_init__(self):
        self.teams = tuple(self.teams)
        self.base = {t: self.base.get(t, Standing()) for t in self.teams}
        problems = self.problems()
        if problems:
            raise LeagueDataError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        known = set(self.teams)
        if len(known) != len(self.teams):
            out.append("duplicate team names")
        seen = {}
        ids = set()
        for f in self.fixtures:
            for t in (f.home, f.away):
                if t not in known:
                    out.append(f"matchday {f.matchday}: unknown team {t!r}")
                key = (f.matchday, t)
                if key in seen:
                    out.append(f"matchday {f.matchday}: {t} plays twice")
                seen[key] = f
            if f.id in ids:
                out.append(f"duplicate fixture {f.id}")
            ids.add(f.id)
        return out

    @property
    def matchdays(self) -> list[int]:
        return sorted({f.matchday for f in self.fixtures})

    @property
    def is_complete(self) -> bool:
        return all(f.played for f in self.fixtures)

    def standings(self, use_scores: bool = True) -> dict:
        table = {t: [s.points, s.goal_difference, s.goals_for] for t, s in self.base.items()}
        for f in self.fixtures:
            if f.played:
                _book(table, f.home, f.away, f.result, (f.goals_home, f.goals_away) if use_scores else None)
        return {t: Standing(*v) for t, v in table.items()}


def _book(table, home, away, outcome, score) -> None:
    ph, pa = {"H": (3, 0), "D": (1, 1), "A": (0, 3)}[outcome]
    table[home][0] += ph
    table[away][0] += pa
    if score is not None:
        gh, ga = score
        table[home][1] += gh - ga
        table[away][1] += ga - gh
        table[home][2] += gh
        table[away][2] += ga


def rank_order(teams: Sequence[str], table: Mapping[str, Sequence[int]]) -> list[str]:
    """Points, then goal difference, then goals scored, then team name."""
    return sorted(teams, key=lambda t: (-table[t][0], -table[t][1], -table[t][2], t))


def final_ranking(season: SeasonState, use_scores: bool = True) -> list[str]:
    if not season.is_complete:
        missing = [f.id for f in season.fixtures if not f.played]
        raise LeagueDataError(f"unresolved fixtures: {', '.join(missing[:5])}")
    table = {t: (s.points, s.goal_difference, s.goals_for) for t, s in season.standings(use_scores).items()}
    return rank_order(season.teams, table)


# --------------------------------------------------------------------------
# outcome model


@dataclass(frozen=True)
class MatchModelParams:
    cuts: tuple[float, float] = (-0.6, 0.6)
    strength_coef: float = 1.0
    home_advantage: float = 0.3
    ei_home_coef: float = 0.0
    ei_away_coef: float = 0.0
    lambda_home: float = 1.55
    lambda_away: float = 1.16

    def __post_init__(self):
        c1, c2 = self.cuts
        if not c1 < c2:
            raise ContestError(f"cut points must be strictly increasing, got {self.cuts}")
        if self.lambda_home <= 0 or self.lambda_away <= 0:
            raise ContestError("Poisson means must be positive")

    @property
    def uses_ei(self) -> bool:
        return self.ei_home_coef != 0.0 or self.ei_away_coef != 0.0


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def ordered_logit(index: float, cuts: Sequence[float]) -> tuple[float, float, float]:
    """(P(H), P(D), P(A)) for latent ``index``; away wins sit below the first cut."""
    p_away = _logistic(cuts[0] - index)
    p_not_home = _logistic(cuts[1] - index)
    return (1.0 - p_not_home, p_not_home - p_away, p_away)


def match_outcome_probs(
    strength_diff: float,
    params: MatchModelParams,
    ei_home: float = 0.0,
    ei_away: float = 0.0,
    home_advantage: bool = True,
) -> tuple[float, float, float]:
    index = (
        params.strength_coef * strength_diff
        + (params.home_advantage if home_advantage else 0.0)
        + params.ei_home_coef * ei_home
        + params.ei_away_coef * ei_away
    )
    return ordered_logit(index, params.cuts)


class LeagueOutcomeModel:
    """Ordered logit over event covariates ``strength_home``/``strength_away``.

    Models with nonzero EI coefficients read ``ei_home``/``ei_away`` (or the
    generic ``ei_<team>``) covariates and fail loudly when they are missing.
    """

    def __init__(self, params: MatchModelParams = MatchModelParams(), scores: bool = True):
        self.params = params
        self.scores = scores
        self.consumes_ei = params.uses_ei
        self._tables = score_tables(params) if scores else None
        if not scores:
            self.sample_detail = None

    def baseline(self) -> "LeagueOutcomeModel":
        return LeagueOutcomeModel(replace(self.params, ei_home_coef=0.0, ei_away_coef=0.0), self.scores)

    def probabilities(self, event: Event, covariates) -> tuple[float, float, float]:
        home, away = event.participants
        diff = covariates["strength_home"] - covariates["strength_away"]
        ei_h = ei_a = 0.0
        if self.consumes_ei:
            ei_h = covariates.get("ei_home", None, covariates.get(ei_covariate_name(home)))
            ei_a = covariates.get("ei_away", None, covariates.get(ei_covariate_name(away)))
            if ei_h is None or ei_a is None:
                raise ContractViolation(f"event {event.id!r} lacks EI covariates for its teams")
        return match_outcome_probs(diff, self.params, ei_h, ei_a, covariates.get("home_advantage", None, 1.0) != 0)

    def sample_detail(self, event: Event, outcome: str, rng) -> tuple[int, int]:
        return sample_scores(self._tables, np.array([OUTCOMES.index(outcome)]), rng)[0]


# --------------------------------------------------------------------------
# scores


def draw_score(outcome: str, params: MatchModelParams, rng) -> tuple[int, int]:
    """Independent Poisson goals, redrawn until they agree with ``outcome``."""
    if outcome not in OUTCOMES:
        raise ContestError(f"outcome must be one of {OUTCOMES}, got {outcome!r}")
    for _ in range(MAX_REJECTIONS):
        gh = int(rng.poisson(params.lambda_home))
        ga = int(rng.poisson(params.lambda_away))
        if outcome_of_score(gh, ga) == outcome:
            return gh, ga
    raise ContestError(f"no {outcome} score after {MAX_REJECTIONS} draws")


@dataclass(frozen=True)
class ScoreTables:
    """Per outcome class: score pairs and their cumulative conditional probabilities.

    ``flat_*`` hold the three classes back to back; ``guide`` maps a class
    and a uniform bucket to the first candidate index, which makes the
    inverse-CDF lookup a couple of gathers instead of a binary search.
    """

    pairs: tuple[np.ndarray, np.ndarray, np.ndarray]
    cdf: tuple[np.ndarray, np.ndarray, np.ndarray]
    flat_cdf: np.ndarray
    flat_home: np.ndarray
    flat_away: np.ndarray
    guide: np.ndarray
    buckets: int


def _poisson_pmf(lam: float, kmax: int) -> np.ndarray:
    k = np.arange(kmax + 1)
    logp = k * math.log(lam) - lam - np.array([math.lgamma(i + 1) for i in k])
    return np.exp(logp)


def score_tables(params: MatchModelParams, max_goals: int = MAX_GOALS, buckets: int = 4096) -> ScoreTables:
    if buckets & (buckets - 1):
        raise ValueError("buckets must be a power of two")
    ph = _poisson_pmf(params.lambda_home, max_goals)
    pa = _poisson_pmf(params.lambda_away, max_goals)
    grid = np.outer(ph, pa)
    gh, ga = np.meshgrid(np.arange(max_goals + 1), np.arange(max_goals + 1), indexing="ij")
    pairs, cdfs, guides = [], [], []
    offset = 0
    edges = np.arange(buckets) / buckets
    for mask in (gh > ga, gh == ga, gh < ga):
        p = grid[mask]
        c = np.cumsum(p / p.sum())
        c[-1] = 1.0
        pairs.append(np.stack([gh[mask], ga[mask]], axis=1))
        cdfs.append(c)
        # entries <= the bucket's lower edge can never be the answer
        guides.append(offset + np.searchsorted(c, edges, side="right"))
        offset += len(c)
    flat = np.concatenate(pairs)
    return ScoreTables(
        tuple(pairs),
        tuple(cdfs),
        np.concatenate(cdfs),
        flat[:, 0].astype(np.int16),
        flat[:, 1].astype(np.int16),
        np.concatenate(guides).astype(np.int64),
        buckets,
    )


def _score_index(tables: ScoreTables, outcomes: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index into the flat tables of the first score whose cdf exceeds ``u``."""
    bucket = (u * tables.buckets).astype(np.intp)
    bucket += outcomes.astype(np.intp) * tables.buckets
    idx = tables.guide[bucket].ravel()
    u = u.ravel()
    # each class ends with cdf 1.0 > u, so the walk never leaves its class
    live = np.flatnonzero(tables.flat_cdf[idx] <= u)
    while live.size:
        idx[live] += 1
        live = live[tables.flat_cdf[idx[live]] <= u[live]]
    return idx.reshape(outcomes.shape)


def sample_scores(tables: ScoreTables, outcomes: np.ndarray, rng) -> np.ndarray:
    """Scores for an array of outcome codes (0=H, 1=D, 2=A); returns shape (..., 2)."""
    outcomes = np.asarray(outcomes)
    idx = _score_index(tables, outcomes, rng.random(outcomes.shape))
    return np.stack([tables.flat_home[idx], tables.flat_away[idx]], axis=-1)


# --------------------------------------------------------------------------
# rewards


@dataclass(frozen=True)
class RewardStructure:
    """Reward label of every final rank, best rank first."""

    by_rank: tuple[str, ...]
    code: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "by_rank", tuple(self.by_rank))
        bad = [lab for lab in self.by_rank if lab not in REWARD_LABELS]
        if bad:
            raise LeagueDataError(f"unknown reward labels {bad}")
        order = [REWARD_LABELS.index(lab) for lab in self.by_rank]
        if order != sorted(order):
            raise LeagueDataError("reward regions must follow the standard order")

    @property
    def size(self) -> int:
        return len(self.by_rank)

    @classmethod
    def from_code(cls, code: str, league_size: int, el_playoff_ranks: int = 0) -> "RewardStructure":
        """Regions for a code such as ``4/3/PDD``.

        The CL count includes the champion. With ``el_playoff_ranks`` the
        last EL spot is contested by that many ranks in a play-off, and all
        of them share the EL reward.
        """
        if code not in REWARD_CODES:
            raise LeagueDataError(f"unknown reward code {code!r}; known codes: {', '.join(REWARD_CODES)}")
        cl, el, tail = code.split("/")
        cl, el = int(cl), int(el)
        if el_playoff_ranks:
            el = el - 1 + el_playoff_ranks
        playoff, direct = tail.count("P"), tail.count("D")
        rest = league_size - cl - el - playoff - direct
        if rest < 0:
            raise LeagueDataError(f"code {code} needs more than {league_size} teams")
        labels = (
            [CHAMPION]
            + [CHAMPIONS_LEAGUE] * (cl - 1)
            + [EUROPA_LEAGUE] * el
            + [NONE] * rest
            + [PLAYOFF] * playoff
            + [RELEGATION] * direct
        )
        return cls(tuple(labels), code)

    @classmethod
    def from_separators(cls, league_size: int, separators: Sequence[int]) -> "RewardStructure":
        """Regions from the last rank of each region: champion, CL, EL, none, play-off."""
        seps = [int(s) for s in separators]
        if len(seps) != 5:
            raise LeagueDataError(f"need 5 separators, got {len(seps)}")
        bounds = [0] + seps + [league_size]
        if any(b < a for a, b in zip(bounds, bounds[1:])):
            raise LeagueDataError(f"separators must be non-decreasing within 0..{league_size}: {seps}")
        labels = []
        for lab, lo, hi in zip(REWARD_LABELS, bounds, bounds[1:]):
            labels += [lab] * (hi - lo)
        return cls(tuple(labels))

    def regions(self) -> list[tuple[str, int, int]]:
        """(label, first rank, last rank) for each non-empty region."""
        out = []
        for rank, lab in enumerate(self.by_rank, start=1):
            if out and out[-1][0] == lab:
                out[-1] = (lab, out[-1][1], rank)
            else:
                out.append((lab, rank, rank))
        return out

    def last_rank_of(self, label: str) -> int:
        ranks = [r for r, lab in enumerate(self.by_rank, start=1) if lab == label]
        return ranks[-1] if ranks else 0


def reward_regions(code: str, league_size: int, el_playoff_ranks: int = 0) -> RewardStructure:
    return RewardStructure.from_code(code, league_size, el_playoff_ranks)


def reward_of_rank(
    rank: int, structure: RewardStructure, team: Optional[str] = None, overrides: Optional[Mapping] = None
) -> str:
    """Region label of ``rank``; ``overrides[team]`` maps labels to team-specific ones."""
    if not 1 <= rank <= structure.size:
        raise LeagueDataError(f"rank {rank} outside 1..{structure.size}")
    label = structure.by_rank[rank - 1]
    if overrides and team in overrides:
        label = overrides[team].get(label, label)
    return label


@dataclass(frozen=True)
class CupState:
    """A national cup whose winner earns a Europa League spot."""

    finalists: tuple[str, ...]
    weights: tuple[float, ...]
    pairing_fixed: bool = True
    name: str = "cup"

    def __post_init__(self):
        object.__setattr__(self, "finalists", tuple(self.finalists))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.finalists:
            raise LeagueDataError(f"{self.name}: no team can still win the cup")
        if len(self.weights) != len(self.finalists):
            raise LeagueDataError(f"{self.name}: {len(self.finalists)} finalists but {len(self.weights)} weights")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise LeagueDataError(f"{self.name}: cup weights must be a probability vector")


def apply_cup_transfer(
    ranking: Sequence[str],
    labels: Mapping[str, str],
    structure: RewardStructure,
    winners: Sequence[str],
) -> dict:
    """Adjust reward labels for the given cup winners, one per cup.

    A winner that already qualifies internationally (or already holds a cup
    spot) hands its spot to the league table: the first unqualified rank
    after the Europa League block moves up. A mid-table winner takes the EL
    spot itself. A winner in a relegation region keeps its label.
    """
    labels = dict(labels)
    next_rank = structure.last_rank_of(EUROPA_LEAGUE) or structure.last_rank_of(CHAMPIONS_LEAGUE) or 1
    holders = set()
    for w in winners:
        if labels[w] in INTERNATIONAL or w in holders:
            next_rank += 1
            if next_rank <= len(ranking):
                team = ranking[next_rank - 1]
                if labels[team] == NONE:
                    labels[team] = EUROPA_LEAGUE
        elif labels[w] == NONE:
            labels[w] = EUROPA_LEAGUE
        holders.add(w)
    return labels


class LeagueReward(RewardFunction):
    labels = REWARD_LABELS

    def __init__(
        self,
        teams: Sequence[str],
        pairs: Mapping[str, tuple[str, str]],
        structure: RewardStructure,
        base: Optional[Mapping[str, Standing]] = None,
        cups: Sequence[CupState] = (),
        overrides: Optional[Mapping[str, Mapping[str, str]]] = None,
        scores: bool = True,
    ):
        if structure.size != len(teams):
            raise LeagueDataError(f"reward structure covers {structure.size} ranks for {len(teams)} teams")
        self.teams = tuple(teams)
        self.pairs = dict(pairs)
        self.structure = structure
        base = base or {}
        self.base = {t: base.get(t, Standing()) for t in self.teams}
        self.cups = tuple(c for c in cups if c.pairing_fixed)
        self.overrides = dict(overrides or {})
        self.scores = scores

    def table(self, outcomes) -> dict:
        table = {t: [s.points, s.goal_difference, s.goals_for] for t, s in self.base.items()}
        for e, r in outcomes.items():
            home, away = self.pairs[e]
            _book(table, home, away, r.outcome, r.detail if self.scores else None)
        return table

    def _base_labels(self, outcomes) -> tuple[list[str], dict]:
        ranking = rank_order(self.teams, self.table(outcomes))
        labels = {
            t: reward_of_rank(r, self.structure, t, self.overrides) for r, t in enumerate(ranking, start=1)
        }
        return ranking, labels

    def rewards(self, outcomes, rng=None):
        ranking, labels = self._base_labels(outcomes)
        if not self.cups:
            return labels
        if rng is None:
            raise ContestError("cup winners are random; pass an rng")
        winners = [c.finalists[rng.choice(len(c.finalists), p=c.weights)] for c in self.cups]
        return apply_cup_transfer(ranking, labels, self.structure, winners)

    def lottery(self, outcomes):
        ranking, labels = self._base_labels(outcomes)
        if not self.cups:
            return [(1.0, labels)]
        out = []
        for combo in np.ndindex(*[len(c.finalists) for c in self.cups]):
            p = math.prod(c.weights[i] for c, i in zip(self.cups, combo))
            if p > 0:
                winners = [c.finalists[i] for c, i in zip(self.cups, combo)]
                out.append((p, apply_cup_transfer(ranking, labels, self.structure, winners)))
        return out


# --------------------------------------------------------------------------
# vectorised completion of a season


class LeagueSampler:
    """Simulates many season completions at once with array operations.

    Requires static covariates (no covariate generator), which holds for
    the league contest: the outcome model depends only on team strengths
    and, in later iterations, fixed EI values.
    """

    def __init__(self, reward: LeagueReward, scores: bool, params: MatchModelParams):
        self.reward = reward
        self.scores = scores
        self.tables = score_tables(params) if scores else None
        teams = reward.teams
        self.team_idx = {t: i for i, t in enumerate(teams)}
        # tie-break of last resort: alphabetical
        name_rank = {t: r for r, t in enumerate(sorted(teams))}
        self.name_key = np.array([len(teams) - 1 - name_rank[t] for t in teams], dtype=np.int64)
        self._cache = weakref.WeakKeyDictionary()
        self._lock = threading.Lock()

    def _static(self, contest: ContestDefinition):
        with self._lock:
            hit = self._cache.get(contest)
        if hit is not None:
            return hit
        if contest.generator is not None:
            raise ContestError("the vectorised league sampler needs static covariates")
        events = list(contest.events)
        model = contest.outcome_model
        probs = np.array([model.probabilities(contest.events[e], contest.events[e].covariates) for e in events])
        T = len(self.reward.teams)
        home = np.array([self.team_idx[self.reward.pairs[e][0]] for e in events])
        away = np.array([self.team_idx[self.reward.pairs[e][1]] for e in events])
        info = (events, {e: i for i, e in enumerate(events)}, np.cumsum(probs, axis=1), home, away, T)
        with self._lock:
            self._cache[contest] = info
        return info

    def sample_counts(self, state: ContestState, fixed, n, rng) -> np.ndarray:
        events, eidx, cum, home, away, T = self._static(state.contest)
        reward = self.reward
        table = np.array(
            [[s.points, s.goal_difference, s.goals_for] for s in reward.base.values()], dtype=np.int64
        )
        for e, r in state.outcomes.items():
            _book_row(table, self.team_idx, reward.pairs[e], r.outcome, r.detail if self.scores else None)
        open_ids = np.array([eidx[e] for e in state.unresolved], dtype=np.int64)
        M = len(open_ids)
        # team-major (T, n) accumulators; matches are rows of the (M, n) draws
        points = np.repeat(table[:, 0:1], n, axis=1)
        gd = np.repeat(table[:, 1:2], n, axis=1)
        gf = np.repeat(table[:, 2:3], n, axis=1)
        if M:
            u = rng.random((M, n))
            c = cum[open_ids]
            out = (u > c[:, 0:1]).astype(np.int8) + (u > c[:, 1:2])
            for j, ev in enumerate(open_ids):
                y = fixed.get(events[ev])
                if y is not None:
                    out[j] = y
            hs, aw = home[open_ids], away[open_ids]
            pts_h = _HOME_POINTS[out]
            pts_a = _AWAY_POINTS[out]
            if self.scores:
                idx = _score_index(self.tables, out, rng.random((M, n)))
                g_h = self.tables.flat_home[idx]
                g_a = self.tables.flat_away[idx]
                diff = g_h - g_a
            for t in range(T):
                rh = np.flatnonzero(hs == t)
                ra = np.flatnonzero(aw == t)
                points[t] += pts_h[rh].sum(axis=0, dtype=np.int64) + pts_a[ra].sum(axis=0, dtype=np.int64)
                if self.scores:
                    gd[t] += diff[rh].sum(axis=0, dtype=np.int64) - diff[ra].sum(axis=0, dtype=np.int64)
                    gf[t] += g_h[rh].sum(axis=0, dtype=np.int64) + g_a[ra].sum(axis=0, dtype=np.int64)
        points, gd, gf = points.T, gd.T, gf.T
        key = (points * 4096 + (gd + 2048)) * 4096 + gf
        key = key * T + self.name_key
        order = np.argsort(-key, axis=1, kind="stable")  # order[i, r] = team at rank r+1
        ranks = np.empty_like(order)
        ranks[np.arange(n)[:, None], order] = np.arange(T)
        lab_of_rank = np.array([REWARD_LABELS.index(x) for x in reward.structure.by_rank])
        labels = lab_of_rank[ranks]
        for team, remap in reward.overrides.items():
            col = self.team_idx[team]
            for src, dst in remap.items():
                labels[:, col] = np.where(
                    labels[:, col] == REWARD_LABELS.index(src), REWARD_LABELS.index(dst), labels[:, col]
                )
        if reward.cups:
            self._cup_transfer(labels, order, rng)
        L = len(REWARD_LABELS)
        flat = (np.arange(T)[None, :] * L + labels).ravel()
        return np.bincount(flat, minlength=T * L).reshape(T, L).astype(float)

    def _cup_transfer(self, labels, order, rng) -> None:
        n = labels.shape[0]
        rows = np.arange(n)
        structure = self.reward.structure
        start = structure.last_rank_of(EUROPA_LEAGUE) or structure.last_rank_of(CHAMPIONS_LEAGUE) or 1
        next_rank = np.full(n, start)
        held = np.zeros(labels.shape, dtype=bool)
        intl = [REWARD_LABELS.index(x) for x in INTERNATIONAL]
        el, none = REWARD_LABELS.index(EUROPA_LEAGUE), REWARD_LABELS.index(NONE)
        T = labels.shape[1]
        for cup in self.reward.cups:
            pick = rng.choice(len(cup.finalists), size=n, p=cup.weights)
            winner = np.array([self.team_idx[f] for f in cup.finalists])[pick]
            wl = labels[rows, winner]
            transfer = np.isin(wl, intl) | held[rows, winner]
            next_rank = next_rank + transfer
            ok = transfer & (next_rank <= T)
            team = order[rows[ok], next_rank[ok] - 1]
            moved = labels[rows[ok], team] == none
            labels[rows[ok][moved], team[moved]] = el
            own = ~transfer & (wl == none)
            labels[rows[own], winner[own]] = el
            held[rows, winner] = True


_HOME_POINTS = np.array([3, 1, 0], dtype=np.int16)
_AWAY_POINTS = np.array([0, 1, 3], dtype=np.int16)


def _book_row(table, team_idx, pair, outcome, score) -> None:
    h, a = team_idx[pair[0]], team_idx[pair[1]]
    ph, pa = {"H": (3, 0), "D": (1, 1), "A": (0, 3)}[outcome]
    table[h, 0] += ph
    table[a, 0] += pa
    if score is not None:
        gh, ga = score
        table[h, 1] += gh - ga
        table[a, 1] += ga - gh
        table[h, 2] += gh
        table[a, 2] += ga


# --------------------------------------------------------------------------
# contest assembly and studies


def build_league_contest(
    season: SeasonState,
    ratings: Mapping[str, float],
    structure: RewardStructure,
    params: MatchModelParams = MatchModelParams(),
    cups: Sequence[CupState] = (),
    overrides: Optional[Mapping[str, Mapping[str, str]]] = None,
    scores: bool = True,
    vectorised: bool = True,
    name: str = "league",
) -> ContestDefinition:
    missing = [t for t in season.teams if t not in ratings]
    if missing:
        raise LeagueDataError(f"no rating for {', '.join(missing)}")
    for cup in cups:
        for t in cup.finalists:
            if t not in season.teams:
                raise LeagueDataError(f"{cup.name}: unknown finalist {t!r}")
    for t in overrides or {}:
        if t not in season.teams:
            raise LeagueDataError(f"override for unknown team {t!r}")
        bad = [x for pair in overrides[t].items() for x in pair if x not in REWARD_LABELS]
        if bad:
            raise LeagueDataError(f"override for {t}: unknown reward labels {bad}")
    events, pairs, groups = {}, {}, {}
    for f in sorted(season.fixtures, key=lambda f: f.matchday):
        events[f.id] = Event(
            f.id,
            (f.home, f.away),
            OUTCOMES,
            {"strength_home": ratings[f.home], "strength_away": ratings[f.away], "home_advantage": 1.0},
        )
        pairs[f.id] = (f.home, f.away)
        groups.setdefault(f.matchday, []).append(f.id)
    schedule = ContestSchedule(tuple(TimeSlot(md, tuple(ids)) for md, ids in sorted(groups.items())))
    reward = LeagueReward(season.teams, pairs, structure, season.base, cups, overrides, scores)
    return ContestDefinition(
        contestants=season.teams,
        events=events,
        schedule=schedule,
        outcome_model=LeagueOutcomeModel(params, scores),
        reward_fn=reward,
        sampler=LeagueSampler(reward, scores, params) if vectorised else None,
        name=name,
    )


def realized_outcomes(season: SeasonState, before: Optional[int] = None) -> dict:
    out = {}
    for f in season.fixtures:
        if f.played and (before is None or f.matchday < before):
            out[f.id] = OutcomeRecord(f.id, f.result, (f.goals_home, f.goals_away))
    return out


@dataclass(frozen=True)
class MatchEI:
    matchday: int
    home: str
    away: str
    ei_home: float
    ei_away: float
    pi_h: float
    pi_d: float
    pi_a: float
    iteration: int


@dataclass
class SeasonEI:
    rounds: list[list[MatchEI]]

    @property
    def final(self) -> list[MatchEI]:
        return self.rounds[-1]

    def rows(self, all_iterations: bool = True) -> list[MatchEI]:
        return [r for rnd in (self.rounds if all_iterations else [self.final]) for r in rnd]

    def by_team(self, iteration: int = -1) -> dict:
        """Largest EI per team over its matches in the chosen round."""
        out = {}
        for m in self.rounds[iteration]:
            out[m.home] = max(out.get(m.home, 0.0), m.ei_home)
            out[m.away] = max(out.get(m.away, 0.0), m.ei_away)
        return out

    def vector(self, iteration: int = -1) -> np.ndarray:
        return np.array([v for m in self.rounds[iteration] for v in (m.ei_home, m.ei_away)])


def _match_rows(contest: ContestDefinition, records: Sequence[EIRecord], iteration: int) -> list[MatchEI]:
    by_event = {}
    for r in records:
        by_event.setdefault(r.event, {})[r.contestant] = r.value
    state = contest.initial_state()
    rows = []
    for e in contest.schedule.events:
        if e not in by_event:
            continue
        ev = contest.events[e]
        home, away = ev.participants
        p = state.probabilities(e)
        md = int(e.split(":", 1)[0])
        rows.append(MatchEI(md, home, away, by_event[e][home], by_event[e][away], *map(float, p), iteration))
    return rows


def _inject(contest: ContestDefinition, records: Sequence[EIRecord]) -> ContestDefinition:
    """Previous-round EI as ``ei_home``/``ei_away`` plus the generic ``ei_<team>`` names."""
    updates = {}
    for r in records:
        home, _ = contest.events[r.event].participants
        side = "ei_home" if r.contestant == home else "ei_away"
        updates.setdefault(r.event, {}).update({ei_covariate_name(r.contestant): r.value, side: r.value})
    return contest.with_event_covariates(updates)


def season_ei(
    season: SeasonState,
    ratings: Mapping[str, float],
    structure: RewardStructure,
    config: SimulationConfig = SimulationConfig(),
    params: MatchModelParams = MatchModelParams(),
    cups: Sequence[CupState] = (),
    overrides: Optional[Mapping] = None,
    matchday: Optional[int] = None,
    scores: bool = True,
) -> SeasonEI:
    """EI of every match for both teams over ``config.iterations`` rounds.

    Without ``matchday`` the whole season must be played and is swept
    backwards. With ``matchday`` the results before it are fixed history and
    only that matchday is analysed; later fixtures may be unplayed.
    """
    contest = build_league_contest(season, ratings, structure, params, cups, overrides, scores)
    model = contest.outcome_model
    baseline = model.baseline()
    if matchday is None:
        if not season.is_complete:
            raise LeagueDataError("post-hoc analysis needs every fixture played; pass a matchday cut-off")
        history = replay(contest, realized_outcomes(season))[-1]
        rounds = iterative_ei(history, config, baseline_model=baseline)
        return SeasonEI(
            [_match_rows(_with_round(contest, baseline, rounds, i), recs, i + 1) for i, recs in enumerate(rounds)]
        )
    if matchday not in season.matchdays:
        raise LeagueDataError(f"no fixtures on matchday {matchday}")
    prior = realized_outcomes(season, before=matchday)
    unplayed = [f.id for f in season.fixtures if f.matchday < matchday and not f.played]
    if unplayed:
        raise LeagueDataError(f"fixtures before the cut-off are unplayed: {', '.join(unplayed[:5])}")
    rounds: list[list[EIRecord]] = []
    out = []
    for it in range(1, config.iterations + 1):
        current = contest.with_model(baseline) if it == 1 else _inject(contest, rounds[-1])
        state = replay(current, prior)[-1]
        slot = state.current_slot()
        if slot is None or slot.index != matchday:
            raise LeagueDataError(f"history does not end right before matchday {matchday}")
        rounds.append(event_importances(state, list(slot.events), config, iteration=it))
        out.append(_match_rows(current, rounds[-1], it))
    return SeasonEI(out)


def _with_round(contest, baseline, rounds, i):
    return contest.with_model(baseline) if i == 0 else _inject(contest, rounds[i - 1])


def simulate_season(
    teams: Sequence[str],
    ratings: Mapping[str, float],
    params: MatchModelParams,
    rng: np.random.Generator,
    shuffle: bool = True,
) -> SeasonState:
    """A fully played double round robin drawn from the outcome model."""
    fixtures = generate_double_round_robin(teams, rng if shuffle else None)
    played = []
    for f in fixtures:
        p = match_outcome_probs(ratings[f.home] - ratings[f.away], params)
        y = OUTCOMES[int(rng.choice(3, p=p))]
        played.append(f.with_score(*draw_score(y, params, rng)))
    return SeasonState(tuple(teams), played)


# --------------------------------------------------------------------------
# files


def _rows(path) -> Iterable[tuple[int, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.DictReader(lines)
        for row in reader:
            yield reader.line_num, row


def _int_or_none(text: str):
    text = (text or "").strip()
    return None if text == "" else int(text)


def load_fixtures(path) -> list[Fixture]:
    out = []
    for line, row in _rows(path):
        try:
            out.append(
                Fixture(
                    int(row["matchday"]),
                    row["home"].strip(),
                    row["away"].strip(),
                    _int_or_none(row.get("goals_home")),
                    _int_or_none(row.get("goals_away")),
                )
            )
        except (KeyError, ValueError, TypeError, LeagueDataError) as exc:
            raise LeagueDataError(f"{path}: record {line}: {exc}") from None
    if not out:
        raise LeagueDataError(f"{path}: no fixtures")
    return out


def load_ratings(path) -> dict:
    out = {}
    for line, row in _rows(path):
        try:
            team = row["team"].strip()
            value = float(row["strength"])
        except (KeyError, ValueError, AttributeError) as exc:
            raise LeagueDataError(f"{path}: record {line}: {exc}") from None
        if not math.isfinite(value):
            raise LeagueDataError(f"{path}: record {line}: strength must be finite")
        if team in out:
            raise LeagueDataError(f"{path}: record {line}: duplicate team {team!r}")
        out[team] = value
    return out


def load_standings(path) -> dict:
    """Carried-over standings: team, points, goal_difference, goals_for (may be blank)."""
    out = {}
    for line, row in _rows(path):
        try:
            team = row["team"].strip()
            out[team] = Standing(
                int(row["points"]),
                int(row.get("goal_difference") or 0),
                int((row.get("goals_for") or "0").strip() or 0),
            )
        except (KeyError, ValueError, AttributeError) as exc:
            raise LeagueDataError(f"{path}: record {line}: {exc}") from None
    return out


def bundled(name: str) -> Path:
    return Path(str(resources.files("eventimportance") / "data" / name))


BUNDESLIGA_FIXTURES = "bundesliga_2017_18_md34.csv"
BUNDESLIGA_STANDINGS = "bundesliga_2017_18_standings.csv"
BUNDESLIGA_RATINGS = "bundesliga_2017_18_ratings.csv"
BUNDESLIGA_REWARDS = "bundesliga_2017_18_rewards.txt"


def season_from_files(fixtures_path, standings_path=None, teams: Optional[Sequence[str]] = None) -> SeasonState:
    fixtures = load_fixtures(fixtures_path)
    base = load_standings(standings_path) if standings_path else {}
    if teams is None:
        seen = list(base)
        for f in fixtures:
            for t in (f.home, f.away):
                if t not in seen:
                    seen.append(t)
        teams = seen
    return SeasonState(tuple(teams), fixtures, base)
