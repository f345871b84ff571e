import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bodyregion import metrics
from bodyregion.errors import BadConfig, EmptyDataset
from bodyregion.labels import ALL_LABELS, REGIONS, RegionSet, format_label, parse
from bodyregion.metrics import LabeledPrediction, RegionMetrics, evaluate

from oracles import naive_confusion

FIXTURE = [  # (truth, prediction)
    ("abdomen", "abdomen"),
    ("abdomen+pelvis", "abdomen"),
    ("chest", "chest"),
    ("other", "other"),
]


def _pairs(rows):
    return [LabeledPrediction(f"s{i}", parse(p), parse(t)) for i, (t, p) in enumerate(rows)]


def test_four_scan_fixture():
    rep = evaluate(_pairs(FIXTURE))
    pel = rep.per_region["pelvis"]
    assert (pel.tp, pel.fp, pel.fn, pel.tn) == (0, 0, 1, 3)
    assert pel.recall == 0 and pel.precision == 0 and pel.precision_undefined
    ab = rep.per_region["abdomen"]
    assert (ab.tp, ab.fp, ab.fn, ab.tn) == (2, 0, 0, 2)
    assert ab.precision == 1.0 and ab.recall == 1.0
    assert rep.per_region["chest"].f1 == 1.0 and rep.per_region["other"].f1 == 1.0
    head = rep.per_region["head"]
    assert (head.tp, head.fp, head.fn, head.tn) == (0, 0, 0, 4) and head.accuracy == 1.0
    assert rep.n_scans == 4


def test_identity_gives_perfect_scores():
    rows = [(t, t) for t, _ in FIXTURE]
    rep = evaluate(_pairs(rows))
    assert all(m.f1 == 1.0 for m in rep.per_region.values() if m.support)
    assert rep.weighted_f1 == 1.0


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        evaluate([])


labels_st = st.one_of(st.just("other"), st.sets(st.sampled_from(REGIONS), min_size=1).map(
    lambda s: "+".join(r for r in REGIONS if r in s)))
datasets = st.lists(st.tuples(labels_st, labels_st), min_size=1, max_size=30)


@settings(max_examples=100, deadline=None)
@given(datasets)
def test_matches_naive_recount(rows):
    rep = evaluate(_pairs(rows))
    for r in ALL_LABELS:
        m = rep.per_region[r]
        assert (m.tp, m.fp, m.fn, m.tn) == naive_confusion([(p, t) for t, p in rows], r)
        assert m.tp + m.fp + m.fn + m.tn == len(rows)
        assert m.support == m.tp + m.fn


@settings(max_examples=50, deadline=None)
@given(datasets, st.randoms(use_true_random=False))
def test_permutation_invariance(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    assert evaluate(_pairs(rows)).to_dict() == evaluate(_pairs(shuffled)).to_dict()


@settings(max_examples=100, deadline=None)
@given(datasets, st.booleans())
def test_weighted_f1_between_extremes(rows, exclude_other):
    rep = evaluate(_pairs(rows), exclude_other)
    f1s = [m.f1 for r, m in rep.per_region.items() if m.support > 0 and not (exclude_other and r == "other")]
    if f1s:
        assert min(f1s) - 1e-12 <= rep.weighted_f1 <= max(f1s) + 1e-12
        assert min(f1s) - 1e-12 <= rep.macro_f1 <= max(f1s) + 1e-12


def test_region_metrics_arithmetic():
    m = RegionMetrics(tp=8, fp=2, fn=4, tn=6)
    assert m.accuracy == pytest.approx(14 / 20)
    assert m.precision == pytest.approx(0.8)
    assert m.recall == pytest.approx(8 / 12)
    assert m.f1 == pytest.approx(2 * 0.8 * (2 / 3) / (0.8 + 2 / 3))


def test_exclude_other_changes_average():
    rows = [("other", "chest"), ("chest", "chest"), ("chest", "chest"), ("other", "other")]
    a, b = evaluate(_pairs(rows)), evaluate(_pairs(rows), exclude_other=True)
    assert b.weighted_f1 == pytest.approx(0.8)
    assert a.weighted_f1 == pytest.approx((0.8 * 2 + (2 / 3) * 2) / 4)


def test_flags_are_counted():
    pairs = [LabeledPrediction("a", RegionSet.other(), RegionSet.of("head"), frozenset({"parse_failure"}))]
    assert evaluate(pairs).flag_counts == {"parse_failure": 1}


def test_export_table_and_json(tmp_path):
    rep = evaluate(_pairs(FIXTURE))
    paths = metrics.export_report(rep, tmp_path)
    table = (tmp_path / "report.txt").read_text().splitlines()
    assert table[0].split() == ["Region", "Accuracy", "Precision", "Recall", "F1", "Support"]
    assert [line.split()[0] for line in table[1:7]] == [r.capitalize() for r in ALL_LABELS]
    assert any(line.startswith("Weighted F1") and line.rstrip().endswith(f"{rep.weighted_f1:.3f}") for line in table)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["per_region"]["pelvis"]["fn"] == 1
    first = [p.read_bytes() for p in paths]
    again = [p.read_bytes() for p in metrics.export_report(rep, tmp_path)]
    assert first == again
    with pytest.raises(ValueError):
        metrics.export_report(rep, tmp_path, kind="xml")


def test_label_files(tmp_path):
    truth = tmp_path / "truth.csv"
    truth.write_text("scan_id,label\n# comment\na,chest\nb,abdomen+pelvis\n")
    pred = tmp_path / "pred.jsonl"
    pred.write_text(json.dumps({"scan_id": "a", "label": "chest", "flags": ["x"]}) + "\n"
                    + json.dumps({"scan_id": "b", "label": "abdomen"}) + "\n"
                    + json.dumps({"scan_id": "c", "label": "head"}) + "\n")
    pairs = metrics.pair_files(pred, truth)
    assert [p.scan_id for p in pairs] == ["a", "b"]
    assert pairs[0].flags == {"x"}
    tsv = tmp_path / "t.tsv"
    tsv.write_text("a\tneck\n")
    assert metrics.read_label_file(tsv) == {"a": RegionSet.of("neck")}
    with pytest.raises(BadConfig):
        metrics.pair_files(tsv, truth)


def test_macro_mean_of_table_rows_gives_headline_numbers():
    ct = [(0.921, 60), (0.939, 65), (0.984, 185), (0.976, 276), (0.996, 230), (0.865, 34)]
    mr = [(0.928, 51), (0.800, 25), (0.959, 58), (0.964, 99), (0.891, 60), (0.945, 209)]
    assert metrics.macro_f1(ct) == pytest.approx(0.947, abs=0.0005)
    assert metrics.macro_f1(mr) == pytest.approx(0.914, abs=0.001)
    # support weighting lands well away from the headline values
    assert metrics.support_weighted_f1(ct) == pytest.approx(0.972, abs=0.0005)
    assert metrics.support_weighted_f1(mr) == pytest.approx(0.935, abs=0.0005)
