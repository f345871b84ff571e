"""Measurement streams over a slice presence index.

Three streams feed the decision step: vertebrae presence, organ presence
with region extent, and edge-slice content. Structures with fewer than
``min_voxels`` voxels are treated as absent everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .labels import REGIONS
from .taxonomy import Taxonomy
from .volume_io import ClassPresence, SlicePresenceIndex

MIN_VOXELS = 10


@dataclass(frozen=True)
class RegionMeasurement:
    vertebra_fraction: float
    organ_fraction: float
    organ_count: int
    extent_cm: float | None
    vertebrae_present: tuple = ()
    organs_present: tuple = ()

    def to_dict(self) -> dict:
        return {
            "vertebra_fraction": self.vertebra_fraction,
            "organ_fraction": self.organ_fraction,
            "organ_count": self.organ_count,
            "extent_cm": self.extent_cm,
            "vertebrae_present": list(self.vertebrae_present),
            "organs_present": list(self.organs_present),
        }


@dataclass(frozen=True)
class EdgeReport:
    top_classes: frozenset = frozenset()
    bottom_classes: frozenset = frozenset()
    top_regions: frozenset = frozenset()
    bottom_regions: frozenset = frozenset()
    truncation_flags: dict = field(default_factory=lambda: {r: False for r in REGIONS})

    def to_dict(self) -> dict:
        order = {r: i for i, r in enumerate(REGIONS)}
        return {
            "top_classes": sorted(self.top_classes),
            "bottom_classes": sorted(self.bottom_classes),
            "top_regions": sorted(self.top_regions, key=order.get),
            "bottom_regions": sorted(self.bottom_regions, key=order.get),
            "truncation_flags": dict(self.truncation_flags),
        }


@dataclass(frozen=True)
class StreamMeasurements:
    regions: dict
    edge: EdgeReport
    min_voxels: int = MIN_VOXELS
    present_structures: tuple = ()

    def to_dict(self) -> dict:
        return {
            "min_voxels": self.min_voxels,
            "present_structures": list(self.present_structures),
            "regions": {r: m.to_dict() for r, m in self.regions.items()},
            "edge": self.edge.to_dict(),
        }


def structure_presence(index: SlicePresenceIndex, taxonomy: Taxonomy,
                       min_voxels: int = MIN_VOXELS) -> dict[str, ClassPresence]:
    """Presence per structure name; classes sharing a name are pooled."""
    out: dict[str, ClassPresence] = {}
    for cid, p in index.per_class.items():
        name = taxonomy.name_of(cid)
        if name is None:
            continue
        prev = out.get(name)
        if prev is not None:
            p = ClassPresence(min(prev.min_slice, p.min_slice), max(prev.max_slice, p.max_slice),
                              prev.voxel_count + p.voxel_count)
        out[name] = p
    return {n: p for n, p in out.items() if p.voxel_count >= min_voxels}


def vertebrae_presence(index: SlicePresenceIndex, taxonomy: Taxonomy,
                       min_voxels: int = MIN_VOXELS) -> dict[str, float]:
    present = structure_presence(index, taxonomy, min_voxels)
    out = {}
    for region in REGIONS:
        expected = taxonomy.rules[region].expected_vertebrae
        out[region] = len(expected & present.keys()) / len(expected) if expected else 0.0
    return out


def organ_presence(index: SlicePresenceIndex, taxonomy: Taxonomy,
                   min_voxels: int = MIN_VOXELS) -> dict[str, tuple[float, int]]:
    present = structure_presence(index, taxonomy, min_voxels)
    out = {}
    for region in REGIONS:
        expected = taxonomy.rules[region].expected_organs
        k = len(expected & present.keys())
        out[region] = (k / len(expected) if expected else 0.0, k)
    return out


def region_extent(index: SlicePresenceIndex, taxonomy: Taxonomy, min_voxels: int = MIN_VOXELS,
                  include_vertebrae: bool = False) -> dict[str, float | None]:
    """Inclusive SI span (cm) of the present constituent organs of each region."""
    present = structure_presence(index, taxonomy, min_voxels)
    out = {}
    for region in REGIONS:
        rule = taxonomy.rules[region]
        names = rule.expected_organs | (rule.expected_vertebrae if include_vertebrae else frozenset())
        hits = [present[n] for n in names if n in present]
        if not hits:
            out[region] = None
            continue
        lo = min(p.min_slice for p in hits)
        hi = max(p.max_slice for p in hits)
        out[region] = (hi - lo + 1) * index.si_spacing_cm
    return out


def edge_content(index: SlicePresenceIndex, taxonomy: Taxonomy,
                 min_voxels: int = MIN_VOXELS) -> EdgeReport:
    """Structures at the first/last non-empty slice and regions touching the volume boundary."""
    kept = index.filtered(min_voxels)
    if kept.is_empty:
        return EdgeReport()
    first, last = kept.first_nonempty_slice, kept.last_nonempty_slice
    top = frozenset(c for c, p in kept.per_class.items() if p.max_slice == last)
    bottom = frozenset(c for c, p in kept.per_class.items() if p.min_slice == first)
    truncated = {r: False for r in REGIONS}
    edge_names = set()
    for c, p in kept.per_class.items():
        if p.min_slice == 0 or p.max_slice == kept.si_axis_len - 1:
            name = taxonomy.name_of(c)
            if name is not None:
                edge_names.add(name)
    for region in REGIONS:
        rule = taxonomy.rules[region]
        truncated[region] = bool(edge_names & (rule.expected_organs | rule.expected_vertebrae))

    def regions_of(classes):
        names = {taxonomy.name_of(c) for c in classes} - {None}
        return frozenset(r for n in names for r in taxonomy.regions_of(n))

    return EdgeReport(top, bottom, regions_of(top), regions_of(bottom), truncated)


def measure(index: SlicePresenceIndex, taxonomy: Taxonomy, min_voxels: int = MIN_VOXELS,
            include_vertebrae_in_extent: bool = False) -> StreamMeasurements:
    present = structure_presence(index, taxonomy, min_voxels)
    vert = vertebrae_presence(index, taxonomy, min_voxels)
    organs = organ_presence(index, taxonomy, min_voxels)
    extent = region_extent(index, taxonomy, min_voxels, include_vertebrae_in_extent)
    regions = {}
    for region in REGIONS:
        rule = taxonomy.rules[region]
        frac, count = organs[region]
        regions[region] = RegionMeasurement(
            vertebra_fraction=vert[region],
            organ_fraction=frac,
            organ_count=count,
            extent_cm=extent[region],
            vertebrae_present=tuple(sorted(rule.expected_vertebrae & present.keys())),
            organs_present=tuple(sorted(rule.expected_organs & present.keys())),
        )
    return StreamMeasurements(regions, edge_content(index, taxonomy, min_voxels), min_voxels,
                              tuple(sorted(present)))
