import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eventimportance.core import (
    Amendment,
    ContestDefinition,
    ContestError,
    ContestSchedule,
    ContractViolation,
    CovariateSet,
    Event,
    OutcomeRecord,
    RewardDistribution,
    TimeSlot,
    check_probability_vector,
    ensure_valid,
    replay,
    sub_schedule,
    validate_contest,
)

from helpers import MomentumGenerator, TableModel, duel


def rec(e, y):
    return OutcomeRecord(e, y)


# --------------------------------------------------------------------------
# validation


def test_well_formed_contest_has_empty_report():
    assert validate_contest(duel(2)) == []


def test_single_outcome_event_is_reported():
    c = duel(2)
    events = dict(c.events)
    events["e1"] = Event("e1", ("A", "B"), ("A",))
    bad = ContestDefinition(c.contestants, events, c.schedule, c.outcome_model, c.reward_fn)
    assert any("outcome space < 2" in p for p in validate_contest(bad))


def test_unknown_contestant_is_reported():
    c = duel(2)
    events = dict(c.events)
    events["e2"] = Event("e2", ("A", "Z"), ("A", "B"))
    bad = ContestDefinition(c.contestants, events, c.schedule, c.outcome_model, c.reward_fn)
    report = validate_contest(bad)
    assert any("unknown contestant" in p for p in report)
    with pytest.raises(ContestError, match="unknown contestant"):
        ensure_valid(bad)


def test_duplicate_and_dangling_events_are_reported():
    c = duel(2)
    sched = ContestSchedule.from_lists([["e1"], ["e1", "e2"], ["e9"]])
    bad = ContestDefinition(c.contestants, c.events, sched, c.outcome_model, c.reward_fn)
    report = validate_contest(bad)
    assert any("duplicate event" in p for p in report)
    assert any("'e9' is not defined" in p for p in report)


# --------------------------------------------------------------------------
# schedules


@pytest.fixture
def three_slots():
    return ContestSchedule.from_lists([["a"], ["b"], ["c"]])


def test_sub_schedule_examples(three_slots):
    assert sub_schedule(three_slots, 2, "before").indices == (1, 2)
    assert sub_schedule(three_slots, 3, "after").indices == ()
    assert sub_schedule(three_slots, 1, "after").indices == (2, 3)


def test_sub_schedule_halves_concatenate(three_slots):
    for t in three_slots.indices:
        before = sub_schedule(three_slots, t, "before")
        after = sub_schedule(three_slots, t, "after")
        assert before.slots + after.slots == three_slots.slots


def test_sub_schedule_rejects_unknown_slot(three_slots):
    with pytest.raises(ContestError):
        sub_schedule(three_slots, 7, "before")
    with pytest.raises(ContestError):
        sub_schedule(three_slots, 1, "sideways")


def test_schedule_problems():
    assert ContestSchedule(()).problems() == ["schedule is empty"]
    s = ContestSchedule((TimeSlot(2, ("a",)), TimeSlot(1, ("b",))))
    assert "slot indices are not strictly increasing" in s.problems()


# --------------------------------------------------------------------------
# applying outcomes


def test_generator_runs_once_per_completed_slot():
    gen = MomentumGenerator()
    state = duel(3, generator=gen).initial_state()
    state = state.apply_outcome(rec("e1", "A"))
    assert gen.calls == 1
    assert state.covariates["e2"]["p_A"] == pytest.approx(0.6)


def test_generator_waits_for_parallel_events():
    gen = MomentumGenerator()
    state = duel(3, groups=[["e1", "e2"], ["e3"]], generator=gen).initial_state()
    state = state.apply_outcome(rec("e1", "A"))
    assert gen.calls == 0
    state.apply_outcome(rec("e2", "B"))
    assert gen.calls == 1


def test_resolving_twice_fails():
    state = duel(2, groups=[["e1", "e2"]]).initial_state().apply_outcome(rec("e1", "A"))
    with pytest.raises(ContestError, match="already resolved"):
        state.apply_outcome(rec("e1", "B"))


def test_label_outside_outcome_space_fails():
    with pytest.raises(ContestError, match="not in outcome space"):
        duel(2).initial_state().apply_outcome(rec("e1", "draw"))


def test_event_outside_current_slot_fails():
    with pytest.raises(ContestError, match="current slot"):
        duel(2).initial_state().apply_outcome(rec("e2", "A"))


def test_states_are_immutable_values():
    s0 = duel(2).initial_state()
    s1 = s0.apply_outcome(rec("e1", "A"))
    assert s0.outcomes == {} and set(s1.outcomes) == {"e1"}


def test_slot_order_does_not_matter():
    c = duel(4, groups=[["e1", "e2", "e3"], ["e4"]], generator=MomentumGenerator())
    records = [rec("e1", "A"), rec("e2", "B"), rec("e3", "A")]
    finals = []
    for perm in itertools.permutations(records):
        s = c.initial_state().apply_slot(perm)
        finals.append((dict(s.outcomes), dict(s.covariates)))
    assert all(f == finals[0] for f in finals)


@given(st.lists(st.sampled_from("AB"), min_size=0, max_size=5))
def test_resolved_and_unresolved_partition_the_schedule(prefix):
    state = duel(5).initial_state()
    for i, y in enumerate(prefix, start=1):
        state = state.apply_outcome(rec(f"e{i}", y))
    resolved, unresolved = state.resolved, set(state.unresolved)
    assert resolved.isdisjoint(unresolved)
    assert resolved | unresolved == set(state.schedule.events)


class _PastRewriter:
    def generate(self, schedule_so_far, covariates_so_far, outcomes_so_far):
        return Amendment(schedule_tail=(TimeSlot(1, ("e2",)),))


def test_generator_may_not_amend_the_past():
    c = duel(2, generator=_PastRewriter())
    with pytest.raises(ContractViolation, match="amended slot"):
        c.initial_state().apply_outcome(rec("e1", "A"))


class _Reorder:
    def generate(self, schedule_so_far, covariates_so_far, outcomes_so_far):
        if "e1" in outcomes_so_far and "e2" not in outcomes_so_far:
            return Amendment(schedule_tail=(TimeSlot(2, ("e3",)), TimeSlot(3, ("e2",))))
        return Amendment()


def test_generator_can_reorder_future_slots():
    s = duel(3, generator=_Reorder()).initial_state().apply_outcome(rec("e1", "A"))
    assert s.current_slot().events == ("e3",)
    assert s.schedule.events == ("e1", "e3", "e2")


def test_replay_returns_state_before_each_slot():
    c = duel(3)
    outs = {e: rec(e, "A") for e in ("e1", "e2", "e3")}
    states = replay(c, outs)
    assert len(states) == 4
    assert [len(s.outcomes) for s in states] == [0, 1, 2, 3]
    assert states[-1].is_complete
    assert len(replay(c, {"e1": rec("e1", "B")})) == 2


# --------------------------------------------------------------------------
# value types


def test_covariate_set_lookup_and_merge():
    cov = CovariateSet({"rho": 0.3, ("zeta", "C0"): 0.1})
    assert cov.get("zeta", "C0") == 0.1
    assert cov.get("zeta", "C1", 7.0) == 7.0
    merged = cov.merged({"rho": 1.0})
    assert merged["rho"] == 1.0 and cov["rho"] == 0.3
    assert CovariateSet({"a": 1}) == CovariateSet({"a": 1.0})
    with pytest.raises(ContestError):
        CovariateSet({"a": "x"})


def test_reward_distribution_validation():
    d = RewardDistribution.from_counts(["w", "l"], [3, 1])
    assert d.prob("w") == 0.75 and d.prob("missing") == 0.0
    assert RewardDistribution.point_mass("l", ["w", "l"]).as_array().tolist() == [0.0, 1.0]
    with pytest.raises(ContestError):
        RewardDistribution({"w": 0.5, "l": 0.4})
    with pytest.raises(ContestError):
        RewardDistribution({"w": -0.1, "l": 1.1})
    with pytest.raises(ContestError):
        RewardDistribution.from_counts(["w"], [0])


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=8).filter(lambda c: sum(c) > 0))
def test_empirical_distributions_sum_to_one(counts):
    d = RewardDistribution.from_counts([str(i) for i in range(len(counts))], counts)
    assert abs(sum(d.mass.values()) - 1.0) <= 1e-9


def test_invalid_probability_vector_names_the_event():
    ev = Event("derby", ("A", "B"), ("A", "B"))
    with pytest.raises(ContractViolation, match="derby"):
        check_probability_vector([0.7, 0.7], ev)
    with pytest.raises(ContractViolation, match="derby"):
        check_probability_vector([1.0], ev)
    assert np.allclose(check_probability_vector([0.25, 0.75], ev), [0.25, 0.75])


def test_state_probabilities_use_the_model():
    s = duel(2, p_a=[0.3, 0.8]).initial_state()
    assert s.probabilities("e2").tolist() == [0.8, pytest.approx(0.2)]
    assert isinstance(s.contest.outcome_model, TableModel)
