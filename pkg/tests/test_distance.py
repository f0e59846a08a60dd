import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from eventimportance.core import ContestError, RewardDistribution
from eventimportance.distance import (
    WeightedDistributionFamily,
    family_from_arrays,
    get_distance,
    shannon_entropy,
    total_variation,
    weighted_jsd,
    win_prob_difference,
)

LABELS = ("A", "B", "C")


def fam(rows, weights, labels=LABELS):
    return family_from_arrays(labels[: len(rows[0])], rows, weights)


def test_entropy_examples():
    assert shannon_entropy(RewardDistribution({"A": 1.0, "B": 0.0})) == 0.0
    assert shannon_entropy(RewardDistribution({k: 1 / 3 for k in LABELS})) == pytest.approx(math.log(3))
    assert shannon_entropy(RewardDistribution({"A": 0.5, "B": 0.5})) == pytest.approx(0.6931471805599453)


def test_jsd_examples():
    same = [[0.2, 0.3, 0.5]] * 3
    assert weighted_jsd(fam(same, [0.1, 0.6, 0.3])) == 0.0
    eye = np.eye(3).tolist()
    assert weighted_jsd(fam(eye, [1 / 3] * 3)) == pytest.approx(1.0, abs=1e-15)
    # frozen from a standalone evaluation of the formula
    assert weighted_jsd(fam([[1, 0], [1, 0], [0, 1]], [0.5, 0.25, 0.25])) == pytest.approx(
        0.5118595071429147, abs=1e-15
    )


def test_win_prob_difference_examples():
    assert win_prob_difference(fam([[0.7, 0.3], [0.4, 0.6]], [0.5, 0.5]), "A") == pytest.approx(0.3)
    assert win_prob_difference(fam([[0.7, 0.3], [0.7, 0.3]], [0.5, 0.5]), "A") == 0.0
    assert win_prob_difference(fam([[1, 0], [0, 1]], [0.9, 0.1]), "A") == 1.0
    with pytest.raises(ContestError, match="exactly 2"):
        win_prob_difference(fam([[1, 0]] * 3, [1 / 3] * 3), "A")
    with pytest.raises(ContestError, match="target"):
        win_prob_difference(fam([[1, 0], [0, 1]], [0.5, 0.5]), "Z")


def test_total_variation_examples():
    assert total_variation(fam([[0.2, 0.8]] * 2, [0.5, 0.5])) == 0.0
    assert total_variation(fam([[1, 0], [0, 1]], [0.3, 0.7])) == 1.0
    assert total_variation(fam([[0.6, 0.4], [0.1, 0.9]], [0.5, 0.5])) == pytest.approx(0.5)


def test_total_variation_many_members_is_weighted_pairwise_mean():
    rows = [[1, 0, 0], [0.5, 0.5, 0], [0, 0, 1]]
    w = [0.2, 0.3, 0.5]
    pairs = {(0, 1): 0.5, (0, 2): 1.0, (1, 2): 1.0}
    expected = sum(w[i] * w[j] * d for (i, j), d in pairs.items()) / sum(w[i] * w[j] for i, j in pairs)
    assert total_variation(fam(rows, w)) == pytest.approx(expected)


def test_mismatched_label_sets_fail():
    a = RewardDistribution({"A": 1.0})
    b = RewardDistribution({"B": 1.0})
    with pytest.raises(ContestError, match="label sets differ"):
        WeightedDistributionFamily((a, b), (0.5, 0.5))


def test_family_validation():
    with pytest.raises(ContestError):
        fam([[1, 0], [0, 1]], [0.5, 0.6])
    with pytest.raises(ContestError):
        fam([[1, 0], [0, 1]], [1.5, -0.5])
    with pytest.raises(ContestError, match="at least 2"):
        weighted_jsd(fam([[1, 0]], [1.0]))


def test_get_distance():
    assert get_distance("jsd") is weighted_jsd
    assert get_distance("tv") is total_variation
    with pytest.raises(ContestError, match="target"):
        get_distance("winprob")
    with pytest.raises(ContestError, match="choose from"):
        get_distance("kl")


# --------------------------------------------------------------------------
# properties over random families


@st.composite
def families(draw, min_members=2, max_members=4, positive=False):
    m = draw(st.integers(min_members, max_members))
    k = draw(st.integers(2, 5))
    unit = st.floats(0.0, 1.0, allow_nan=False)
    rows = []
    for _ in range(m):
        raw = np.array(draw(st.lists(unit, min_size=k, max_size=k)))
        assume(raw.sum() > 1e-6)
        rows.append(raw / raw.sum())
    wraw = np.array(draw(st.lists(st.floats(0.01 if positive else 0.0, 1.0), min_size=m, max_size=m)))
    assume(wraw.sum() > 1e-6)
    w = wraw / wraw.sum()
    labels = tuple(f"r{i}" for i in range(k))
    return labels, np.array(rows), w


def _family(labels, rows, w):
    return family_from_arrays(labels, rows, w)


@settings(max_examples=300, deadline=None)
@given(families())
def test_all_metrics_are_bounded(data):
    labels, rows, w = data
    f = _family(labels, rows, w)
    for value in (weighted_jsd(f), total_variation(f)):
        assert 0.0 <= value <= 1.0
    if len(rows) == 2:
        assert 0.0 <= win_prob_difference(f, labels[0]) <= 1.0


@settings(max_examples=200, deadline=None)
@given(families(), st.randoms(use_true_random=False))
def test_jsd_is_permutation_symmetric(data, rnd):
    labels, rows, w = data
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    a = weighted_jsd(_family(labels, rows, w))
    b = weighted_jsd(_family(labels, rows[perm], w[perm]))
    assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(families(positive=True))
def test_jsd_zero_iff_identical(data):
    labels, rows, w = data
    value = weighted_jsd(_family(labels, rows, w))
    identical = all(np.allclose(r, rows[0], atol=1e-9) for r in rows)
    if identical:
        assert value == pytest.approx(0.0, abs=1e-12)
    else:
        assert value > 0.0
    same = np.repeat(rows[:1], len(rows), axis=0)
    assert weighted_jsd(_family(labels, same, w)) == 0.0


def classic_jsd(p, q):
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / b[mask])))

    return (0.5 * kl(p, m) + 0.5 * kl(q, m)) / math.log(2)


def test_two_member_jsd_matches_classic_form():
    rng = np.random.default_rng(20240501)
    for _ in range(100):
        k = int(rng.integers(2, 7))
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        labels = tuple(f"r{i}" for i in range(k))
        assert weighted_jsd(family_from_arrays(labels, [p, q], [0.5, 0.5])) == pytest.approx(
            classic_jsd(p, q), abs=1e-12
        )


def test_zero_weight_member_is_ignored_by_identity_shortcut():
    f = fam([[1, 0], [1, 0], [0, 1]], [0.5, 0.5, 0.0])
    assert weighted_jsd(f) == 0.0


@pytest.mark.parametrize("m", [2, 3, 4])
def test_distinct_point_masses_reach_one(m):
    labels = tuple(f"r{i}" for i in range(m))
    eye = np.eye(m)
    f = family_from_arrays(labels, eye, [1 / m] * m)
    assert weighted_jsd(f) == pytest.approx(1.0)
    assert total_variation(f) == pytest.approx(1.0)
    for perm in itertools.permutations(range(m)):
        assert weighted_jsd(family_from_arrays(labels, eye[list(perm)], [1 / m] * m)) == pytest.approx(1.0)
