"""Modality-specific anatomical knowledge: class dictionaries, region groups, region rules.

The builtin tables encode which segmented structures belong to which body
region and the quantitative win conditions per region. Thresholds are data;
a YAML override file can replace groups, thresholds or condition sets.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

import yaml

from .errors import InvalidThreshold, MissingRegionRule, TaxonomyError, UnknownClassName
from .labels import REGIONS, region_order  # noqa: F401  (re-exported)

MODALITIES = ("CT", "MR")


class Condition(str, enum.Enum):
    VERTEBRAE = "vertebrae"
    ORGANS = "organs"
    EXTENT = "extent"


V, O, E = Condition.VERTEBRAE, Condition.ORGANS, Condition.EXTENT

FRACTION = "fraction"
MIN_COUNT = "min_count"


def _vert(*names):
    return frozenset(n if n == "sacrum" else f"vertebrae_{n}" for n in names)


def _span(prefix, hi, lo):
    return [f"{prefix}{i}" for i in range(hi, lo - 1, -1)]


_CT_CHEST_ORGANS = frozenset(
    ["lung_upper_lobe_left", "lung_lower_lobe_left", "lung_upper_lobe_right",
     "lung_middle_lobe_right", "lung_lower_lobe_right", "heart", "sternum", "costal_cartilages"]
    + [f"rib_left_{i}" for i in range(1, 13)]
    + [f"rib_right_{i}" for i in range(1, 13)]
)
_ABDOMEN_ORGANS = frozenset(["spleen", "kidney_right", "kidney_left", "gallbladder", "liver",
                             "stomach", "pancreas", "duodenum", "colon"])
_PELVIS_ORGANS = frozenset(["urinary_bladder", "prostate", "hip_left", "hip_right", "sacrum"])

ORGAN_GROUPS = {
    "CT": {
        "head": frozenset(["brain", "skull"]),
        "neck": frozenset(["esophagus", "trachea", "thyroid_gland"]),
        "chest": _CT_CHEST_ORGANS,
        "abdomen": _ABDOMEN_ORGANS,
        "pelvis": _PELVIS_ORGANS,
    },
    "MR": {
        "head": frozenset(["brain"]),
        "neck": frozenset(["esophagus"]),
        "chest": frozenset(["lung_left", "lung_right", "heart"]),
        "abdomen": _ABDOMEN_ORGANS,
        "pelvis": _PELVIS_ORGANS,
    },
}

_COMMON_VERTEBRAE = {
    "head": _vert(*_span("C", 4, 1)),
    "neck": _vert("T2", "T1", *_span("C", 7, 1)),
    "chest": _vert("L1", *_span("T", 12, 1), "C7", "C6"),
    "abdomen": _vert(*_span("L", 4, 1), *_span("T", 12, 8)),
}
VERTEBRA_GROUPS = {
    "CT": {**_COMMON_VERTEBRAE, "pelvis": _vert("sacrum", "S1", "L5", "L4", "L3")},
    "MR": {**_COMMON_VERTEBRAE, "pelvis": _vert("sacrum", "L5", "L4", "L3")},
}

# Counts as printed in the rule table; abdomen (8) and CT chest organs (34)
# disagree with the enumerated groups (9 and 32). Denominators use the groups.
STATED_VERTEBRA_COUNTS = {
    "CT": {"head": 4, "neck": 9, "chest": 15, "abdomen": 8, "pelvis": 5},
    "MR": {"head": 4, "neck": 9, "chest": 15, "abdomen": 8, "pelvis": 4},
}
STATED_ORGAN_COUNTS = {
    "CT": {"head": 2, "neck": 3, "chest": 34, "abdomen": 9, "pelvis": 5},
    "MR": {"head": 1, "neck": 1, "chest": 3, "abdomen": 9, "pelvis": 5},
}
NOMINAL_EXTENT_CM = {
    "head": (15.0, 25.0),
    "neck": (8.0, 15.0),
    "chest": (20.0, 35.0),
    "abdomen": (15.0, 25.0),
    "pelvis": (15.0, 25.0),
}
# region -> (conditions, organ threshold kind)
_CONDITIONS = {
    "CT": {
        "head": ({V, E}, FRACTION),
        "neck": ({V, O, E}, MIN_COUNT),
        "chest": ({V, O, E}, FRACTION),
        "abdomen": ({V, O, E}, FRACTION),
        "pelvis": ({V, O, E}, FRACTION),
    },
    "MR": {
        "head": ({V, E}, FRACTION),
        "neck": ({V, E}, FRACTION),
        "chest": ({V, O, E}, MIN_COUNT),
        "abdomen": ({V, O, E}, FRACTION),
        "pelvis": ({V, O, E}, FRACTION),
    },
}

VERTEBRA_THRESHOLD = 0.60
ORGAN_THRESHOLD = 0.30
ORGAN_MIN_COUNT = 1
EXTENT_WINDOW = (0.70, 1.30)


@dataclass(frozen=True)
class RegionRule:
    region: str
    expected_vertebrae: frozenset
    expected_organs: frozenset
    extent_cm: tuple
    conditions: frozenset
    stated_vertebra_count: int | None = None
    stated_organ_count: int | None = None
    organ_threshold_kind: str = FRACTION
    organ_threshold: float = ORGAN_THRESHOLD
    organ_min_count: int = ORGAN_MIN_COUNT
    vertebra_threshold: float = VERTEBRA_THRESHOLD
    extent_window: tuple = EXTENT_WINDOW

    @property
    def extent_bounds(self) -> tuple[float, float]:
        """Accepted extent interval in cm: (low factor * nominal min, high factor * nominal max)."""
        lo, hi = self.extent_window
        return lo * self.extent_cm[0], hi * self.extent_cm[1]

    def validate(self):
        for name, value in (("vertebra_threshold", self.vertebra_threshold),
                            ("organ_threshold", self.organ_threshold)):
            if not 0.0 < value <= 1.0:
                raise InvalidThreshold(f"{self.region}.{name}={value} outside (0, 1]")
        if self.organ_min_count < 1:
            raise InvalidThreshold(f"{self.region}.organ_min_count must be >= 1")
        if self.organ_threshold_kind not in (FRACTION, MIN_COUNT):
            raise InvalidThreshold(f"{self.region}.organ_threshold_kind={self.organ_threshold_kind!r}")
        lo, hi = self.extent_cm
        if not 0 < lo < hi:
            raise InvalidThreshold(f"{self.region}.extent_cm must satisfy 0 < min < max, got {self.extent_cm}")
        wlo, whi = self.extent_window
        if not 0 < wlo <= 1.0 <= whi:
            raise InvalidThreshold(f"{self.region}.extent_window must satisfy 0 < low <= 1 <= high")
        if not self.conditions:
            raise InvalidThreshold(f"{self.region} has no conditions")


@dataclass(frozen=True)
class Taxonomy:
    modality: str
    class_names: Mapping[int, str]
    organ_groups: Mapping[str, frozenset]
    vertebra_groups: Mapping[str, frozenset]
    rules: Mapping[str, RegionRule]
    _ids: Mapping[str, tuple] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids: dict[str, list[int]] = {}
        for cid, name in sorted(self.class_names.items()):
            ids.setdefault(name, []).append(cid)
        object.__setattr__(self, "_ids", {k: tuple(v) for k, v in ids.items()})

    def ids_for(self, name: str) -> tuple:
        """Class ids carrying ``name`` (several when label maps are merged)."""
        try:
            return self._ids[name]
        except KeyError:
            raise UnknownClassName(f"{name!r} is not a {self.modality} class") from None

    def name_of(self, class_id: int) -> str | None:
        return self.class_names.get(class_id)

    def regions_of(self, name: str) -> set[str]:
        return {r for r in REGIONS
                if name in self.organ_groups.get(r, ()) or name in self.vertebra_groups.get(r, ())}

    def validate(self):
        for region in REGIONS:
            if region not in self.rules:
                raise MissingRegionRule(f"no rule for region {region!r}")
            self.rules[region].validate()
        for groups in (self.organ_groups, self.vertebra_groups):
            for region, names in groups.items():
                if region not in REGIONS:
                    raise TaxonomyError(f"unknown region {region!r} in groups")
                for n in names:
                    self.ids_for(n)
        for rule in self.rules.values():
            for n in rule.expected_vertebrae | rule.expected_organs:
                self.ids_for(n)
        return self

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "class_names": {int(k): v for k, v in sorted(self.class_names.items())},
            "organ_groups": {r: sorted(self.organ_groups[r]) for r in REGIONS},
            "vertebra_groups": {r: sorted(self.vertebra_groups[r]) for r in REGIONS},
            "rules": {r: _rule_to_dict(self.rules[r]) for r in REGIONS},
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _rule_to_dict(rule: RegionRule) -> dict:
    return {
        "conditions": [c.value for c in Condition if c in rule.conditions],
        "vertebra_threshold": rule.vertebra_threshold,
        "organ_threshold_kind": rule.organ_threshold_kind,
        "organ_threshold": rule.organ_threshold,
        "organ_min_count": rule.organ_min_count,
        "extent_cm": list(rule.extent_cm),
        "extent_window": list(rule.extent_window),
        "stated_vertebra_count": rule.stated_vertebra_count,
        "stated_organ_count": rule.stated_organ_count,
    }


_MODALITY_ALIASES = {"MRI": "MR"}


def normalize_modality(modality: str) -> str:
    m = str(modality).upper()
    m = _MODALITY_ALIASES.get(m, m)
    if m not in MODALITIES:
        raise TaxonomyError(f"unknown modality {modality!r}; expected CT or MR")
    return m


def load_class_names(modality: str) -> dict[int, str]:
    fname = {"CT": "ct_total.json", "MR": "mr_total.json"}[normalize_modality(modality)]
    data = json.loads(resources.files("bodyregion.data").joinpath(fname).read_text())
    return {int(k): v for k, v in data["classes"].items()}


def builtin(modality: str) -> Taxonomy:
    """The default taxonomy for ``modality``; one shared instance per modality."""
    return _builtin(normalize_modality(modality))


@lru_cache(maxsize=2)
def _builtin(m: str) -> Taxonomy:
    rules = {}
    for region in REGIONS:
        conditions, kind = _CONDITIONS[m][region]
        rules[region] = RegionRule(
            region=region,
            expected_vertebrae=VERTEBRA_GROUPS[m][region],
            expected_organs=ORGAN_GROUPS[m][region],
            extent_cm=NOMINAL_EXTENT_CM[region],
            conditions=frozenset(conditions),
            stated_vertebra_count=STATED_VERTEBRA_COUNTS[m][region],
            stated_organ_count=STATED_ORGAN_COUNTS[m][region],
            organ_threshold_kind=kind,
        )
    return Taxonomy(
        modality=m,
        class_names=load_class_names(m),
        organ_groups=dict(ORGAN_GROUPS[m]),
        vertebra_groups=dict(VERTEBRA_GROUPS[m]),
        rules=rules,
    ).validate()


_RULE_KEYS = {"conditions", "vertebra_threshold", "organ_threshold_kind", "organ_threshold",
              "organ_min_count", "extent_cm", "extent_window",
              "stated_vertebra_count", "stated_organ_count"}


def apply_override(base: Taxonomy, override: Mapping | None) -> Taxonomy:
    """Return ``base`` with the groups, class names and rule fields in ``override`` replaced."""
    if not override:
        return base
    unknown_keys = set(override) - {"modality", "class_names", "organ_groups", "vertebra_groups", "rules"}
    if unknown_keys:
        raise TaxonomyError(f"unknown taxonomy keys: {sorted(unknown_keys)}")

    class_names = dict(base.class_names)
    for cid, name in (override.get("class_names") or {}).items():
        class_names[int(cid)] = str(name)

    groups = {}
    for key, current in (("organ_groups", base.organ_groups), ("vertebra_groups", base.vertebra_groups)):
        g = dict(current)
        for region, names in (override.get(key) or {}).items():
            if region not in REGIONS:
                raise TaxonomyError(f"unknown region {region!r} in {key}")
            g[region] = frozenset(names or ())
        groups[key] = g

    rules = {}
    rule_over = override.get("rules") or {}
    for region in rule_over:
        if region not in REGIONS:
            raise TaxonomyError(f"unknown region {region!r} in rules")
    for region in REGIONS:
        if region in rule_over and rule_over[region] is None:
            continue  # explicit removal; rejected by validate()
        rule = base.rules[region]
        organs = groups["organ_groups"].get(region, frozenset())
        verts = groups["vertebra_groups"].get(region, frozenset())
        if organs != rule.expected_organs:
            rule = replace(rule, expected_organs=organs, stated_organ_count=len(organs))
        if verts != rule.expected_vertebrae:
            rule = replace(rule, expected_vertebrae=verts, stated_vertebra_count=len(verts))
        fields = rule_over.get(region) or {}
        bad = set(fields) - _RULE_KEYS
        if bad:
            raise TaxonomyError(f"unknown rule keys for {region}: {sorted(bad)}")
        changes = {}
        for k, v in fields.items():
            if k == "conditions":
                try:
                    changes[k] = frozenset(Condition(str(c).lower()) for c in v)
                except ValueError as exc:
                    raise TaxonomyError(f"bad condition in {region}: {exc}") from None
            elif k in ("extent_cm", "extent_window"):
                changes[k] = tuple(float(x) for x in v)
            elif k == "organ_threshold_kind":
                changes[k] = str(v)
            elif k in ("organ_min_count", "stated_vertebra_count", "stated_organ_count"):
                changes[k] = int(v)
            else:
                changes[k] = float(v)
        rules[region] = replace(rule, **changes)

    tax = Taxonomy(
        modality=base.modality,
        class_names=class_names,
        organ_groups=groups["organ_groups"],
        vertebra_groups=groups["vertebra_groups"],
        rules=rules,
    )
    return tax.validate()


def load_override(path, modality: str | None = None) -> Taxonomy:
    """Load a YAML override file on top of the builtin taxonomy.

    The modality comes from the file's ``modality`` key or the argument.
    """
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise TaxonomyError(f"{path}: taxonomy override must be a mapping")
    m = data.get("modality") or modality
    if m is None:
        raise TaxonomyError(f"{path}: modality not given in file or by caller")
    if modality is not None and normalize_modality(m) != normalize_modality(modality):
        raise TaxonomyError(f"{path}: file modality {m} does not match requested {modality}")
    return apply_override(builtin(m), data)
