"""Region-label algebra: parse, normalize, validate, order and format compound labels.

A label is a non-empty set of regions drawn from head, neck, chest, abdomen,
pelvis and the rejection category ``other``. Serialized labels are lowercase,
``+``-joined and always in cranio-caudal order, e.g. ``chest+abdomen``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import EmptyInput, LabelError, MixedOther, UnknownToken

logger = logging.getLogger(__name__)

REGIONS = ("head", "neck", "chest", "abdomen", "pelvis")
OTHER = "other"
ALL_LABELS = REGIONS + (OTHER,)

_RANK = {name: i for i, name in enumerate(ALL_LABELS)}
_WORD = re.compile(r"[a-z0-9]+")


def region_order() -> list[str]:
    return list(REGIONS)


@dataclass(frozen=True)
class RegionSet:
    regions: frozenset

    def __post_init__(self):
        regions = frozenset(self.regions)
        object.__setattr__(self, "regions", regions)
        if not regions:
            raise LabelError("a region set cannot be empty")
        unknown = regions - set(ALL_LABELS)
        if unknown:
            raise UnknownToken(f"unknown region(s): {sorted(unknown)}")
        if OTHER in regions and len(regions) > 1:
            raise MixedOther(f"'other' cannot be combined with {sorted(regions - {OTHER})}")

    @classmethod
    def of(cls, *regions: str) -> "RegionSet":
        return cls(frozenset(regions))

    @classmethod
    def other(cls) -> "RegionSet":
        return cls(frozenset({OTHER}))

    @property
    def is_other(self) -> bool:
        return OTHER in self.regions

    def ordered(self) -> list[str]:
        return sorted(self.regions, key=_RANK.__getitem__)

    def __iter__(self):
        return iter(self.ordered())

    def __contains__(self, region) -> bool:
        return region in self.regions

    def __len__(self) -> int:
        return len(self.regions)

    def __str__(self) -> str:
        return format_label(self)


def format_label(rs: RegionSet) -> str:
    return "+".join(rs.ordered())


def parse(canonical: str) -> RegionSet:
    """Strict parse of a canonical ``+``-joined label (no synonyms, no case folding)."""
    text = canonical.strip()
    if not text:
        raise EmptyInput("empty label string")
    tokens = [t.strip() for t in text.split("+")]
    for tok in tokens:
        if tok not in _RANK:
            raise UnknownToken(f"unknown label token {tok!r} in {canonical!r}")
    return RegionSet(frozenset(tokens))


@dataclass(frozen=True)
class SynonymTable:
    """Phrase to region(s) mapping, matched on lowercase word tokens."""

    phrases: Mapping[tuple, tuple]

    @property
    def max_len(self) -> int:
        return max(len(p) for p in self.phrases)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "SynonymTable":
        phrases = {}
        for phrase, target in mapping.items():
            if phrase.startswith("_"):
                continue
            targets = (target,) if isinstance(target, str) else tuple(target)
            for t in targets:
                if t not in _RANK:
                    raise LabelError(f"synonym {phrase!r} maps to unknown region {t!r}")
            words = tuple(_WORD.findall(phrase.lower()))
            if not words:
                raise LabelError(f"synonym phrase {phrase!r} has no words")
            phrases[words] = targets
        for name in ALL_LABELS:
            phrases.setdefault((name,), (name,))
        return cls(phrases)

    @classmethod
    def load(cls, path) -> "SynonymTable":
        return cls.from_mapping(json.loads(Path(path).read_text()))


@lru_cache(maxsize=1)
def default_synonyms() -> SynonymTable:
    text = resources.files("bodyregion.data").joinpath("synonyms.json").read_text()
    return SynonymTable.from_mapping(json.loads(text))


def match_tokens(freetext: str, synonyms: SynonymTable | None = None) -> tuple[list[str], list[str]]:
    """Greedy longest-phrase matching. Returns (matched regions, unmatched words)."""
    table = synonyms or default_synonyms()
    words = _WORD.findall(freetext.lower())
    matched, unknown = [], []
    i = 0
    while i < len(words):
        for n in range(min(table.max_len, len(words) - i), 0, -1):
            target = table.phrases.get(tuple(words[i:i + n]))
            if target is not None:
                matched.extend(target)
                i += n
                break
        else:
            unknown.append(words[i])
            i += 1
    return matched, unknown


def normalize(freetext: str, synonyms: SynonymTable | None = None) -> RegionSet:
    """Map free text (e.g. a model answer) onto a valid RegionSet.

    Unknown words next to at least one valid region are dropped with a
    warning; text without any region word collapses to ``other``.
    """
    if not freetext or not freetext.strip():
        raise EmptyInput("blank label text")
    matched, unknown = match_tokens(freetext, synonyms)
    named = {m for m in matched if m != OTHER}
    if not named:
        return RegionSet.other()
    if unknown:
        logger.warning("dropping unrecognized label words %s in %r", unknown, freetext)
    if OTHER in matched:
        logger.warning("dropping 'other' next to named regions in %r", freetext)
    return RegionSet(frozenset(named))


def sort_regions(regions: Iterable[str]) -> list[str]:
    return sorted(set(regions), key=_RANK.__getitem__)
