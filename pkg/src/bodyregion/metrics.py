"""Per-region evaluation of compound labels.

Each named region is scored as a binary label (present in the set or not);
``other`` is positive only when the whole label is ``other``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import BadConfig, EmptyDataset
from .labels import ALL_LABELS, OTHER, RegionSet, parse

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledPrediction:
    scan_id: str
    predicted: RegionSet
    truth: RegionSet
    flags: frozenset = frozenset()


@dataclass(frozen=True)
class RegionMetrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def precision_undefined(self) -> bool:
        return self.tp + self.fp == 0

    @property
    def recall_undefined(self) -> bool:
        return self.tp + self.fn == 0

    @property
    def precision(self) -> float:
        return 0.0 if self.precision_undefined else self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        return 0.0 if self.recall_undefined else self.tp / (self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
            "f1": self.f1, "support": self.support,
            "precision_undefined": self.precision_undefined,
            "recall_undefined": self.recall_undefined,
        }


def support_weighted_f1(rows: Iterable[tuple[float, int]]) -> float:
    """sum(f1 * support) / sum(support) over rows with support > 0."""
    rows = [(f, s) for f, s in rows if s > 0]
    total = sum(s for _, s in rows)
    return sum(f * s for f, s in rows) / total if total else 0.0


def macro_f1(rows: Iterable[tuple[float, int]]) -> float:
    """Unweighted mean f1 over rows with support > 0."""
    rows = [f for f, s in rows if s > 0]
    return sum(rows) / len(rows) if rows else 0.0


@dataclass(frozen=True)
class MetricsReport:
    per_region: dict
    n_scans: int
    exclude_other: bool = False
    flag_counts: dict = field(default_factory=dict)

    def _rows(self):
        return [(m.f1, m.support) for r, m in self.per_region.items()
                if not (self.exclude_other and r == OTHER)]

    @property
    def weighted_f1(self) -> float:
        return support_weighted_f1(self._rows())

    @property
    def macro_f1(self) -> float:
        return macro_f1(self._rows())

    def to_dict(self) -> dict:
        return {
            "n_scans": self.n_scans,
            "exclude_other": self.exclude_other,
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
            "flag_counts": dict(sorted(self.flag_counts.items())),
            "per_region": {r: self.per_region[r].to_dict() for r in ALL_LABELS},
        }


def _positive(rs: RegionSet, region: str) -> bool:
    if region == OTHER:
        return rs.is_other
    return region in rs


def evaluate(pairs: Sequence[LabeledPrediction], exclude_other: bool = False) -> MetricsReport:
    if not pairs:
        raise EmptyDataset("nothing to evaluate")
    counts = {r: [0, 0, 0, 0] for r in ALL_LABELS}  # tp fp fn tn
    flags: dict[str, int] = {}
    for p in pairs:
        for f in p.flags:
            flags[f] = flags.get(f, 0) + 1
        for r in ALL_LABELS:
            pred, true = _positive(p.predicted, r), _positive(p.truth, r)
            if pred and true:
                counts[r][0] += 1
            elif pred:
                counts[r][1] += 1
            elif true:
                counts[r][2] += 1
            else:
                counts[r][3] += 1
    per_region = {r: RegionMetrics(*c) for r, c in counts.items()}
    return MetricsReport(per_region, len(pairs), exclude_other, flags)


# ---------------------------------------------------------------- files

def read_label_file(path) -> dict[str, RegionSet]:
    """scan id -> label from CSV/TSV (``scan_id,label``) or JSON Lines records."""
    path = Path(path)
    out: dict[str, RegionSet] = {}
    if path.suffix in (".jsonl", ".json"):
        for line in path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                out[str(rec["scan_id"])] = parse(rec["label"])
        return out
    delim = "\t" if path.suffix in (".tsv", ".tab") else ","
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delim)
        for row in reader:
            if not row or row[0].startswith("#"):
                continue
            if row[0] == "scan_id":
                continue
            out[row[0].strip()] = parse(row[1].strip())
    return out


def read_flags(path) -> dict[str, frozenset]:
    path = Path(path)
    if path.suffix not in (".jsonl", ".json"):
        return {}
    out = {}
    for line in path.read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            out[str(rec["scan_id"])] = frozenset(rec.get("flags", ()))
    return out


def pair_files(pred_path, truth_path) -> list[LabeledPrediction]:
    preds, truth = read_label_file(pred_path), read_label_file(truth_path)
    flags = read_flags(pred_path)
    missing = sorted(set(truth) - set(preds))
    if missing:
        raise BadConfig(f"{len(missing)} scans without prediction, e.g. {missing[:3]}")
    extra = set(preds) - set(truth)
    if extra:
        logger.warning("ignoring %d predictions without ground truth", len(extra))
    return [LabeledPrediction(s, preds[s], truth[s], flags.get(s, frozenset())) for s in sorted(truth)]


def format_table(report: MetricsReport) -> str:
    lines = [f"{'Region':<10}{'Accuracy':>10}{'Precision':>11}{'Recall':>9}{'F1':>8}{'Support':>9}"]
    for r in ALL_LABELS:
        m = report.per_region[r]
        mark = "*" if m.precision_undefined or m.recall_undefined else " "
        lines.append(f"{r.capitalize():<10}{m.accuracy:>10.3f}{m.precision:>11.3f}{m.recall:>9.3f}"
                     f"{m.f1:>8.3f}{m.support:>9d}{mark}")
    lines.append(f"Weighted F1 (support-weighted): {report.weighted_f1:.3f}")
    lines.append(f"Macro F1 (unweighted mean):     {report.macro_f1:.3f}")
    lines.append(f"Scans: {report.n_scans}" + ("  (other excluded from averages)" if report.exclude_other else ""))
    if any(m.precision_undefined or m.recall_undefined for m in report.per_region.values()):
        lines.append("* zero denominator: undefined precision/recall reported as 0")
    return "\n".join(lines) + "\n"


def export_report(report: MetricsReport, destination, kind: str = "both") -> list[Path]:
    """Write ``report.json`` and/or ``report.txt`` into ``destination``."""
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    if kind in ("json", "both"):
        p = dest / "report.json"
        p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n")
        written.append(p)
    if kind in ("table", "both"):
        p = dest / "report.txt"
        p.write_text(format_table(report))
        written.append(p)
    if not written:
        raise ValueError(f"unknown report kind {kind!r}")
    return written
