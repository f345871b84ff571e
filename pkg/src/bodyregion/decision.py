"""Condition scoring, win aggregation and end-to-end rule-based classification."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

from .analysis import MIN_VOXELS, EdgeReport, RegionMeasurement, StreamMeasurements, measure
from .errors import EmptyVolume
from .labels import REGIONS, RegionSet
from .taxonomy import FRACTION, Condition, RegionRule, Taxonomy
from .volume_io import OBLIQUE_THRESHOLD, Volume, build_presence_index, canonicalize

logger = logging.getLogger(__name__)

# absorbs float noise so that mathematically equal values win
_EPS = 1e-9


class Outcome(str, enum.Enum):
    WON = "won"
    LOST = "lost"
    NOT_APPLICABLE = "not_applicable"


MAX_SCORE = "max_score"
THRESHOLD_ALL = "threshold_all"


@dataclass(frozen=True)
class DecisionPolicy:
    min_score: float = 2 / 3
    selection: str = MAX_SCORE

    def __post_init__(self):
        if not 0.0 < self.min_score <= 1.0:
            raise ValueError(f"min_score must be in (0, 1], got {self.min_score}")
        if self.selection not in (MAX_SCORE, THRESHOLD_ALL):
            raise ValueError(f"unknown selection {self.selection!r}")


@dataclass(frozen=True)
class RegionAssessment:
    region: str
    outcomes: dict
    wins: int
    applicable: int

    @property
    def score(self) -> float:
        return self.wins / self.applicable if self.applicable else 0.0

    def to_dict(self) -> dict:
        return {
            "outcomes": {c.value: o.value for c, o in self.outcomes.items()},
            "wins": self.wins,
            "applicable": self.applicable,
            "score": self.score,
        }


@dataclass(frozen=True)
class ClassificationResult:
    label: RegionSet
    assessments: dict = field(default_factory=dict)
    edge: EdgeReport = field(default_factory=EdgeReport)
    policy_used: DecisionPolicy | None = None
    measurements: StreamMeasurements | None = None
    mode: str = "rules"
    flags: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {
            "label": str(self.label),
            "mode": self.mode,
            "flags": sorted(self.flags),
            "scores": {r: a.score for r, a in self.assessments.items()},
            "assessments": {r: a.to_dict() for r, a in self.assessments.items()},
            "truncation_flags": dict(self.edge.truncation_flags),
        }


def score_region(region: str, m: RegionMeasurement, rule: RegionRule) -> RegionAssessment:
    outcomes = {}
    for cond in Condition:
        if cond not in rule.conditions:
            outcomes[cond] = Outcome.NOT_APPLICABLE
            continue
        if cond is Condition.VERTEBRAE:
            won = m.vertebra_fraction >= rule.vertebra_threshold - _EPS
        elif cond is Condition.ORGANS:
            if rule.organ_threshold_kind == FRACTION:
                won = m.organ_fraction >= rule.organ_threshold - _EPS
            else:
                won = m.organ_count >= rule.organ_min_count
        else:
            lo, hi = rule.extent_bounds
            won = m.extent_cm is not None and lo - _EPS <= m.extent_cm <= hi + _EPS
        outcomes[cond] = Outcome.WON if won else Outcome.LOST
    wins = sum(o is Outcome.WON for o in outcomes.values())
    return RegionAssessment(region, outcomes, wins, len(rule.conditions))


def aggregate(assessments: dict, policy: DecisionPolicy = DecisionPolicy()) -> RegionSet:
    """Turn per-region completeness scores into the final label."""
    scores = {r: assessments[r].score for r in REGIONS}
    if policy.selection == MAX_SCORE:
        best = max(scores.values())
        if best < policy.min_score - _EPS:
            return RegionSet.other()
        chosen = [r for r in REGIONS if abs(scores[r] - best) <= _EPS]
    else:
        chosen = [r for r in REGIONS if scores[r] >= policy.min_score - _EPS]
    return RegionSet(frozenset(chosen)) if chosen else RegionSet.other()


def classify_measurements(measurements: StreamMeasurements, taxonomy: Taxonomy,
                          policy: DecisionPolicy = DecisionPolicy()) -> ClassificationResult:
    assessments = {r: score_region(r, measurements.regions[r], taxonomy.rules[r]) for r in REGIONS}
    return ClassificationResult(aggregate(assessments, policy), assessments, measurements.edge,
                                policy, measurements)


def classify_volume(v: Volume, taxonomy: Taxonomy, policy: DecisionPolicy = DecisionPolicy(),
                    min_voxels: int = MIN_VOXELS, oblique_threshold: float = OBLIQUE_THRESHOLD,
                    include_vertebrae_in_extent: bool = False) -> ClassificationResult:
    """Canonicalize, index, measure, score and aggregate one label volume.

    An empty volume yields ``other`` with the ``empty_volume`` flag;
    :class:`ObliqueVolume` propagates.
    """
    canon = canonicalize(v, oblique_threshold)
    try:
        index = build_presence_index(canon)
    except EmptyVolume:
        logger.info("empty label volume; labelled as other")
        return ClassificationResult(RegionSet.other(), policy_used=policy,
                                    flags=frozenset({"empty_volume"}))
    measurements = measure(index, taxonomy, min_voxels, include_vertebrae_in_extent)
    result = classify_measurements(measurements, taxonomy, policy)
    if not measurements.present_structures:
        result = ClassificationResult(result.label, result.assessments, result.edge, policy,
                                      measurements, flags=frozenset({"no_structures"}))
    return result
