"""Distances between conditional reward distributions.

Each function takes a :class:`WeightedDistributionFamily`: one reward
distribution per outcome of the examined event, weighted by that outcome's
probability. All results lie in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import PROB_TOL, ContestError, RewardDistribution


def shannon_entropy(d: RewardDistribution) -> float:
    """Entropy in nats, with 0 * ln 0 taken as 0."""
    return _entropy(d.as_array())


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


@dataclass(frozen=True)
class WeightedDistributionFamily:
    members: tuple[RewardDistribution, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        members = tuple(self.members)
        weights = tuple(float(w) for w in self.weights)
        if len(members) != len(weights):
            raise ContestError(f"{len(members)} members but {len(weights)} weights")
        if not members:
            raise ContestError("empty distribution family")
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise ContestError(f"invalid weights {weights}")
        if abs(sum(weights) - 1.0) > PROB_TOL:
            raise ContestError(f"weights sum to {sum(weights)!r}, not 1")
        labels = set(members[0].labels)
        for m in members[1:]:
            if set(m.labels) != labels:
                raise ContestError(
                    f"reward label sets differ: {sorted(labels)} vs {sorted(m.labels)}"
                )
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "weights", weights)

    @property
    def labels(self) -> tuple[str, ...]:
        return self.members[0].labels

    def matrix(self) -> np.ndarray:
        """Members as rows over a common label order."""
        labels = self.labels
        return np.vstack([m.as_array(labels) for m in self.members])


def _require_members(family: WeightedDistributionFamily, at_least: int = 2) -> None:
    if len(family.members) < at_least:
        raise ContestError(f"need at least {at_least} members, got {len(family.members)}")


def weighted_jsd(family: WeightedDistributionFamily) -> float:
    """Weighted Jensen-Shannon divergence scaled by 1/ln(m) for m members."""
    _require_members(family)
    P = family.matrix()
    w = np.asarray(family.weights)
    live = w > 0
    if np.all(P[live] == P[live][0]):
        return 0.0
    mixture = w @ P
    value = _entropy(mixture) - sum(wi * _entropy(row) for wi, row in zip(w, P) if wi > 0)
    value /= math.log(len(family.members))
    return float(min(max(value, 0.0), 1.0))


def win_prob_difference(family: WeightedDistributionFamily, target: str) -> float:
    """|P1(target) - P2(target)| for a binary event."""
    if len(family.members) != 2:
        raise ContestError(
            f"win-probability difference needs exactly 2 members, got {len(family.members)}"
        )
    if target not in family.labels:
        raise ContestError(f"target label {target!r} not among {family.labels}")
    a, b = (m.prob(target) for m in family.members)
    return float(min(abs(a - b), 1.0))


def total_variation(family: WeightedDistributionFamily) -> float:
    """Total variation distance.

    For more than two members this is the mean of the pairwise distances,
    each pair weighted by the product of its two outcome probabilities.
    """
    _require_members(family)
    P = family.matrix()
    if len(P) == 2:
        return float(min(0.5 * np.abs(P[0] - P[1]).sum(), 1.0))
    w = np.asarray(family.weights)
    num = den = 0.0
    for i in range(len(P)):
        for j in range(i + 1, len(P)):
            pair = w[i] * w[j]
            num += pair * 0.5 * np.abs(P[i] - P[j]).sum()
            den += pair
    if den == 0.0:
        return 0.0
    return float(min(num / den, 1.0))


DISTANCES = ("jsd", "tv", "winprob")


def get_distance(name: str, target: Optional[str] = None) -> Callable[[WeightedDistributionFamily], float]:
    if name == "jsd":
        return weighted_jsd
    if name == "tv":
        return total_variation
    if name == "winprob":
        if target is None:
            raise ContestError("the winprob distance needs a target reward label")
        return lambda family: win_prob_difference(family, target)
    raise ContestError(f"unknown distance {name!r}; choose from {', '.join(DISTANCES)}")


def family_from_arrays(
    labels: Sequence[str], rows: Sequence[Sequence[float]], weights: Sequence[float]
) -> WeightedDistributionFamily:
    members = tuple(RewardDistribution(dict(zip(labels, map(float, r)))) for r in rows)
    return WeightedDistributionFamily(members, tuple(weights))
