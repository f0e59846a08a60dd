"""Small hand-built contests shared by the tests."""

from __future__ import annotations

from eventimportance.core import (
    Amendment,
    ContestDefinition,
    ContestSchedule,
    Event,
    RewardFunction,
)


class TableModel:
    """Probabilities read from covariates ``p_<outcome>``."""

    consumes_ei = False

    def probabilities(self, event, covariates):
        return [covariates[f"p_{y}"] for y in event.outcome_space]


class EIModel(TableModel):
    """Shifts mass toward A by 0.1 * ei_A; requires the covariate."""

    consumes_ei = True

    def __init__(self):
        self.seen = []

    def probabilities(self, event, covariates):
        ei = covariates["ei_A"]
        self.seen.append((event.id, ei))
        pa = min(max(covariates["p_A"] + 0.1 * ei, 0.0), 1.0)
        return [pa, 1.0 - pa]


class MajorityReward(RewardFunction):
    """Most event wins takes 'win', the other 'lose'; equal counts give 'tie'."""

    labels = ("win", "tie", "lose")

    def rewards(self, outcomes, rng=None):
        a = sum(r.outcome == "A" for r in outcomes.values())
        b = sum(r.outcome == "B" for r in outcomes.values())
        if a == b:
            return {"A": "tie", "B": "tie"}
        return {"A": "win", "B": "lose"} if a > b else {"A": "lose", "B": "win"}


class SweepReward(RewardFunction):
    """A wins only by taking every event."""

    labels = ("win", "lose")

    def rewards(self, outcomes, rng=None):
        a_all = all(r.outcome == "A" for r in outcomes.values())
        return {"A": "win" if a_all else "lose", "B": "lose" if a_all else "win"}


class MomentumGenerator:
    """Each A win raises A's chance in later events by 0.1; counts calls."""

    def __init__(self, base=0.5):
        self.base = base
        self.calls = 0

    def generate(self, schedule_so_far, covariates_so_far, outcomes_so_far):
        self.calls += 1
        lead = sum(1 if r.outcome == "A" else -1 for r in outcomes_so_far.values())
        p = min(max(self.base + 0.1 * lead, 0.05), 0.95)
        return Amendment(covariates={e: {"p_A": p, "p_B": 1 - p} for e in self._open(outcomes_so_far)})

    def bind(self, events):
        self.events = list(events)
        return self

    def _open(self, outcomes):
        return [e for e in self.events if e not in outcomes]


def duel(
    n_events: int = 3,
    p_a=0.5,
    groups=None,
    reward: RewardFunction | None = None,
    model=None,
    generator=None,
    extra_contestant: bool = False,
) -> ContestDefinition:
    """Two contestants A and B; every event is won by one of them."""
    ids = [f"e{i}" for i in range(1, n_events + 1)]
    probs = p_a if isinstance(p_a, (list, tuple)) else [p_a] * n_events
    events = {
        e: Event(e, ("A", "B"), ("A", "B"), {"p_A": p, "p_B": 1.0 - p}) for e, p in zip(ids, probs)
    }
    groups = groups or [[e] for e in ids]
    contestants = ("A", "B", "C") if extra_contestant else ("A", "B")
    reward = reward or MajorityReward()
    if extra_contestant:
        reward = _Bystander(reward)
    if generator is not None and hasattr(generator, "bind"):
        generator.bind(ids)
    return ContestDefinition(
        contestants=contestants,
        events=events,
        schedule=ContestSchedule.from_lists(groups),
        outcome_model=model or TableModel(),
        reward_fn=reward,
        generator=generator,
    )


class _Bystander(RewardFunction):
    """Adds contestant C, who always ends with 'lose'."""

    def __init__(self, inner):
        self.inner = inner
        self.labels = inner.labels

    def rewards(self, outcomes, rng=None):
        out = dict(self.inner.rewards(outcomes, rng))
        out["C"] = "lose"
        return out
