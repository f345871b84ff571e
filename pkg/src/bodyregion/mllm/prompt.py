"""Prompt assembly for the MLLM pipelines and parsing of model answers."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from ..analysis import StreamMeasurements
from ..errors import MissingEvidence, Unparseable
from ..labels import ALL_LABELS, OTHER, REGIONS, RegionSet, match_tokens, normalize
from ..taxonomy import FRACTION, Condition, Taxonomy
from .render import CompositeImage

logger = logging.getLogger(__name__)

PLAIN = "plain"
SEGMENTATION_AWARE = "segmentation_aware"

# Radiologist-defined cranio-caudal boundaries: region -> (start, end)
BOUNDARIES = {
    "head": ("Above the skull", "Below the chin / C3-C4"),
    "neck": ("Skull", "Manubrium sterni / T1-T2"),
    "chest": ("First rib / C6-C7", "Below the diaphragm / L1"),
    "abdomen": ("Above diaphragm / T8-T9", "Iliac crests upper edge / L3-L4"),
    "pelvis": ("Iliac crests upper edge / L3-L4", "Below symphysis pubis"),
}

VISIBILITY_PERCENT = 60
ANSWER_MARKER = "FINAL:"


def visibility_instruction(percent: int = VISIBILITY_PERCENT) -> str:
    return (f"Identify and include only those regions where at least {percent} percent of the "
            f"anatomically defined region is visible across the three views.")


@dataclass(frozen=True)
class AnatomicalEvidence:
    present_structures: tuple
    region_extents_cm: dict

    @classmethod
    def from_measurements(cls, m: StreamMeasurements) -> "AnatomicalEvidence":
        return cls(tuple(m.present_structures),
                   {r: m.regions[r].extent_cm for r in REGIONS if m.regions[r].extent_cm is not None})

    def to_text(self) -> str:
        lines = ["SEGMENTATION EVIDENCE",
                 "Segmented structures: " + (", ".join(self.present_structures) or "none")]
        lines.append("Region sizes (cranio-caudal span of segmented organs, cm):")
        if self.region_extents_cm:
            lines += [f"  {r}: {self.region_extents_cm[r]:.1f}" for r in REGIONS if r in self.region_extents_cm]
        else:
            lines.append("  none")
        return "\n".join(lines)


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    mode: str = PLAIN
    image: CompositeImage | None = None
    evidence: AnatomicalEvidence | None = None
    meta: dict = field(default_factory=dict)


_SPINE = re.compile(r"vertebrae_([CTLS])(\d+)$")


def spinal_order(name: str) -> tuple:
    """Sort key: cervical to sacral, then everything else by name."""
    m = _SPINE.match(name)
    if m:
        return (0, "CTLS".index(m.group(1)), int(m.group(2)), name)
    return (1 if name == "sacrum" else 2, 0, 0, name)


def _rules_text(taxonomy: Taxonomy) -> list[str]:
    lines = []
    for region in REGIONS:
        rule = taxonomy.rules[region]
        parts = []
        if Condition.VERTEBRAE in rule.conditions:
            parts.append(f"vertebrae ({', '.join(sorted(rule.expected_vertebrae, key=spinal_order))}): at least "
                         f"{rule.vertebra_threshold:.0%} visible")
        if Condition.ORGANS in rule.conditions:
            need = (f"at least {rule.organ_threshold:.0%} visible" if rule.organ_threshold_kind == FRACTION
                    else f"at least {rule.organ_min_count} visible")
            parts.append(f"key organs ({', '.join(sorted(rule.expected_organs))}): {need}")
        if Condition.EXTENT in rule.conditions:
            lo, hi = rule.extent_cm
            parts.append(f"expected cranio-caudal extent {lo:g}-{hi:g} cm")
        lines.append(f"- {region}: " + "; ".join(parts))
    return lines


def build_prompt(taxonomy: Taxonomy, mode: str = PLAIN, evidence: AnatomicalEvidence | None = None,
                 image: CompositeImage | None = None,
                 visibility_percent: int = VISIBILITY_PERCENT) -> PromptBundle:
    if mode not in (PLAIN, SEGMENTATION_AWARE):
        raise ValueError(f"unknown prompt mode {mode!r}")
    if mode == SEGMENTATION_AWARE and evidence is None:
        raise MissingEvidence("segmentation-aware prompting needs anatomical evidence")
    if mode == PLAIN and evidence is not None:
        logger.warning("evidence supplied in plain mode; ignored")
        evidence = None

    system = [
        f"You are an expert radiologist assessing which body regions this {taxonomy.modality} "
        "volume covers. You see one composite image with three orthogonal views of the same scan, "
        "left to right: axial, sagittal, coronal. Cross-check all three views before deciding.",
        "",
        "Body region boundaries (start -> end, cranial to caudal):",
    ]
    for region in REGIONS:
        start, end = BOUNDARIES[region]
        system.append(f"- {region}: {start} -> {end}")
    system += ["", "Structures and coverage expected for each region:"] + _rules_text(taxonomy)
    system += [
        "",
        visibility_instruction(visibility_percent),
        "Regions may overlap; report every region that qualifies.",
        "If no region qualifies (for example extremities or a sliver of an organ), answer other.",
        "",
        "Allowed labels: " + ", ".join(ALL_LABELS) + ".",
        f"Output format: end your answer with a single line '{ANSWER_MARKER} <label>' where <label> "
        "joins the regions with '+' in cranio-caudal order (head, neck, chest, abdomen, pelvis), "
        f"e.g. '{ANSWER_MARKER} chest+abdomen', or '{ANSWER_MARKER} other'.",
    ]
    user = ["Which body regions are covered by this scan? The composite image is attached."]
    if evidence is not None:
        user += ["", evidence.to_text(),
                 "", "Use this evidence together with the images; it does not replace visual verification."]
    return PromptBundle("\n".join(system), "\n".join(user), mode, image, evidence)


_FINAL = re.compile(r"^[\s*>#`_-]*final(?:\s+answer)?\s*[:=]\s*(.*)$", re.IGNORECASE | re.MULTILINE)


def _clean(text: str) -> str:
    return text.strip().strip("*`'\"_ .")


def parse_response(raw: str) -> RegionSet:
    """Extract the final label from a model answer.

    Prefers the last ``FINAL:`` line; otherwise the last line naming a
    region. Raises :class:`Unparseable` when neither exists.
    """
    for candidate in reversed(_FINAL.findall(raw or "")):
        text = _clean(candidate)
        if text:
            return normalize(text)
    for line in reversed((raw or "").splitlines()):
        text = _clean(line)
        if not text:
            continue
        matched, unknown = match_tokens(text)
        if any(m != OTHER for m in matched) or (matched == [OTHER] and not unknown):
            return normalize(text)
    raise Unparseable(f"no region label found in response: {raw[:80]!r}" if raw else "empty response")
