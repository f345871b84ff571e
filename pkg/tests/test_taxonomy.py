import pytest
import yaml

from bodyregion import taxonomy
from bodyregion.errors import InvalidThreshold, MissingRegionRule, TaxonomyError, UnknownClassName
from bodyregion.labels import REGIONS, region_order, sort_regions
from bodyregion.taxonomy import FRACTION, MIN_COUNT, Condition

V, O, E = Condition.VERTEBRAE, Condition.ORGANS, Condition.EXTENT


def _v(*names):
    return {n if n == "sacrum" else f"vertebrae_{n}" for n in names}


# rule table, transcribed independently of the package constants
TABLE = {
    ("CT", "head"): dict(conds={V, E}, verts=_v("C1", "C2", "C3", "C4"), n_organs=2, extent=(15, 25), kind=None),
    ("MR", "head"): dict(conds={V, E}, verts=_v("C1", "C2", "C3", "C4"), n_organs=1, extent=(15, 25), kind=None),
    ("CT", "neck"): dict(conds={V, O, E}, verts=_v("T2", "T1", *[f"C{i}" for i in range(1, 8)]), n_organs=3,
                         extent=(8, 15), kind=MIN_COUNT),
    ("MR", "neck"): dict(conds={V, E}, verts=_v("T2", "T1", *[f"C{i}" for i in range(1, 8)]), n_organs=1,
                         extent=(8, 15), kind=None),
    ("CT", "chest"): dict(conds={V, O, E}, verts=_v("L1", *[f"T{i}" for i in range(1, 13)], "C7", "C6"),
                          n_organs=32, extent=(20, 35), kind=FRACTION),
    ("MR", "chest"): dict(conds={V, O, E}, verts=_v("L1", *[f"T{i}" for i in range(1, 13)], "C7", "C6"),
                          n_organs=3, extent=(20, 35), kind=MIN_COUNT),
    ("CT", "abdomen"): dict(conds={V, O, E}, verts=_v("L1", "L2", "L3", "L4", "T8", "T9", "T10", "T11", "T12"),
                            n_organs=9, extent=(15, 25), kind=FRACTION),
    ("MR", "abdomen"): dict(conds={V, O, E}, verts=_v("L1", "L2", "L3", "L4", "T8", "T9", "T10", "T11", "T12"),
                            n_organs=9, extent=(15, 25), kind=FRACTION),
    ("CT", "pelvis"): dict(conds={V, O, E}, verts=_v("sacrum", "S1", "L5", "L4", "L3"), n_organs=5,
                           extent=(15, 25), kind=FRACTION),
    ("MR", "pelvis"): dict(conds={V, O, E}, verts=_v("sacrum", "L5", "L4", "L3"), n_organs=5,
                           extent=(15, 25), kind=FRACTION),
}
STATED = {  # printed (V, O) counts
    ("CT", "head"): (4, 2), ("MR", "head"): (4, 1), ("CT", "neck"): (9, 3), ("MR", "neck"): (9, 1),
    ("CT", "chest"): (15, 34), ("MR", "chest"): (15, 3), ("CT", "abdomen"): (8, 9), ("MR", "abdomen"): (8, 9),
    ("CT", "pelvis"): (5, 5), ("MR", "pelvis"): (4, 5),
}


@pytest.mark.parametrize("modality,region", sorted(TABLE))
def test_rule_cell(modality, region):
    rule = taxonomy.builtin(modality).rules[region]
    row = TABLE[(modality, region)]
    assert set(rule.conditions) == row["conds"]
    assert set(rule.expected_vertebrae) == row["verts"]
    assert len(rule.expected_organs) == row["n_organs"]
    assert rule.extent_cm == row["extent"]
    assert rule.vertebra_threshold == 0.60
    assert rule.extent_window == (0.70, 1.30)
    if row["kind"] is not None:
        assert rule.organ_threshold_kind == row["kind"]
    assert rule.organ_threshold == 0.30
    assert rule.organ_min_count == 1
    assert (rule.stated_vertebra_count, rule.stated_organ_count) == STATED[(modality, region)]


def test_extent_bounds():
    rule = taxonomy.builtin("CT").rules["abdomen"]
    lo, hi = rule.extent_bounds
    assert lo == pytest.approx(10.5) and hi == pytest.approx(32.5)


def test_organ_groups():
    ct, mr = taxonomy.builtin("CT"), taxonomy.builtin("MR")
    assert ct.organ_groups["head"] == {"brain", "skull"}
    assert ct.organ_groups["neck"] == {"esophagus", "trachea", "thyroid_gland"}
    assert {f"rib_left_{i}" for i in range(1, 13)} <= ct.organ_groups["chest"]
    assert {"sternum", "costal_cartilages", "heart", "lung_middle_lobe_right"} <= ct.organ_groups["chest"]
    assert mr.organ_groups["neck"] == {"esophagus"}
    assert mr.organ_groups["chest"] == {"lung_left", "lung_right", "heart"}
    for tax in (ct, mr):
        assert tax.organ_groups["pelvis"] == {"urinary_bladder", "prostate", "hip_left", "hip_right", "sacrum"}
        assert len(tax.organ_groups["abdomen"]) == 9


def test_class_dictionaries():
    ct, mr = taxonomy.builtin("CT"), taxonomy.builtin("MR")
    assert len(ct.class_names) == 117
    assert len(mr.class_names) == 75
    for tax in (ct, mr):
        for region in REGIONS:
            rule = tax.rules[region]
            for name in rule.expected_organs | rule.expected_vertebrae:
                assert tax.ids_for(name), name


def test_groups_may_overlap():
    ct = taxonomy.builtin("CT")
    assert ct.regions_of("vertebrae_C7") == {"neck", "chest"}
    assert ct.regions_of("sacrum") == {"pelvis"}


def test_region_order():
    assert region_order() == ["head", "neck", "chest", "abdomen", "pelvis"]
    assert sort_regions({"pelvis", "chest"}) == ["chest", "pelvis"]


def test_modality_aliases():
    assert taxonomy.builtin("ct") is taxonomy.builtin("CT")
    assert taxonomy.builtin("MRI").modality == "MR"
    with pytest.raises(TaxonomyError):
        taxonomy.builtin("PET")


class TestOverride:
    def _write(self, tmp_path, data):
        p = tmp_path / "tax.yaml"
        p.write_text(data if isinstance(data, str) else yaml.safe_dump(data))
        return p

    def test_vertebra_threshold(self, tmp_path):
        p = self._write(tmp_path, {"rules": {"abdomen": {"vertebra_threshold": 0.5}}})
        tax = taxonomy.load_override(p, "CT")
        assert tax.rules["abdomen"].vertebra_threshold == 0.5
        assert tax.rules["chest"].vertebra_threshold == 0.6

    def test_unknown_class_name(self, tmp_path):
        p = self._write(tmp_path, {"organ_groups": {"abdomen": ["livr", "spleen"]}})
        with pytest.raises(UnknownClassName):
            taxonomy.load_override(p, "CT")

    def test_empty_file_is_builtin(self, tmp_path):
        p = self._write(tmp_path, "")
        assert taxonomy.load_override(p, "CT").to_dict() == taxonomy.builtin("CT").to_dict()

    @pytest.mark.parametrize("value", [0.0, 1.5, -0.2])
    def test_invalid_threshold(self, tmp_path, value):
        p = self._write(tmp_path, {"rules": {"chest": {"organ_threshold": value}}})
        with pytest.raises(InvalidThreshold):
            taxonomy.load_override(p, "CT")

    def test_removed_rule(self, tmp_path):
        p = self._write(tmp_path, {"rules": {"neck": None}})
        with pytest.raises(MissingRegionRule):
            taxonomy.load_override(p, "CT")

    def test_group_change_updates_rule(self, tmp_path):
        p = self._write(tmp_path, {"modality": "MR", "organ_groups": {"neck": ["esophagus", "heart"]}})
        tax = taxonomy.load_override(p)
        assert tax.rules["neck"].expected_organs == {"esophagus", "heart"}
        assert tax.regions_of("heart") == {"neck", "chest"}

    def test_conditions_and_extent(self, tmp_path):
        p = self._write(tmp_path, {"rules": {"head": {"conditions": ["vertebrae"], "extent_cm": [10, 20]}}})
        rule = taxonomy.load_override(p, "CT").rules["head"]
        assert set(rule.conditions) == {V}
        assert rule.extent_cm == (10.0, 20.0)

    def test_modality_mismatch(self, tmp_path):
        p = self._write(tmp_path, {"modality": "MR"})
        with pytest.raises(TaxonomyError):
            taxonomy.load_override(p, "CT")

    def test_unknown_keys(self, tmp_path):
        with pytest.raises(TaxonomyError):
            taxonomy.load_override(self._write(tmp_path, {"ruls": {}}), "CT")
        with pytest.raises(TaxonomyError):
            taxonomy.load_override(self._write(tmp_path, {"rules": {"knee": {}}}), "CT")

    def test_dump_round_trips(self, tmp_path):
        base = taxonomy.builtin("MR")
        p = self._write(tmp_path, base.dump())
        assert taxonomy.load_override(p).to_dict() == base.to_dict()
