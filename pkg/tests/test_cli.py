import json

import pytest
import yaml

from bodyregion import cli
from bodyregion.errors import BadConfig, NoInputs


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("ph")
    assert cli.main(["phantom", "generate", "--n", "8", "--seed", "1", "--intensity", "--out", str(out)]) == 0
    return out


def _records(path):
    return [json.loads(line) for line in (path / "records.jsonl").read_text().splitlines()]


def test_phantom_generate(corpus):
    files = sorted(corpus.glob("*.nii.gz"))
    assert len(files) == 8
    assert len(list((corpus / "images").glob("*.nii.gz"))) == 8
    assert (corpus / "truth.csv").read_text().splitlines()[0] == "scan_id,label,kind"


def test_classify_three_phantoms(corpus, tmp_path):
    inputs = [str(p) for p in sorted(corpus.glob("*.nii.gz"))[:3]]
    assert cli.main(["classify", *inputs, "--modality", "ct", "--out", str(tmp_path)]) == 0
    recs = _records(tmp_path)
    assert len(recs) == 3
    assert [r["scan_id"] for r in recs] == ["phantom_0000", "phantom_0001", "phantom_0002"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_scans"] == 3
    for r in recs:
        assert set(r) >= {"scan_id", "path", "label", "scores", "truncation_flags", "flags", "config"}
        assert r["config"]["tau"] == pytest.approx(2 / 3)
        assert r["config"]["min_voxels"] == 10 and r["config"]["policy"] == "max_score"


def test_classify_matches_truth_and_is_order_stable(corpus, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["classify", str(corpus), "--modality", "ct", "--workers", "1", "--out", str(a)])
    cli.main(["classify", str(corpus), "--modality", "ct", "--workers", "8", "--out", str(b)])
    strip = lambda recs: [{k: v for k, v in r.items() if k != "config"} for r in recs]  # noqa: E731
    assert strip(_records(a)) == strip(_records(b))
    truth = dict(line.split(",")[:2] for line in (corpus / "truth.csv").read_text().splitlines()[1:])
    assert {r["scan_id"]: r["label"] for r in _records(a)} == truth


def test_evaluate_fixture(tmp_path, capsys):
    truth, pred = tmp_path / "truth.csv", tmp_path / "pred.csv"
    truth.write_text("scan_id,label\na,abdomen\nb,abdomen+pelvis\nc,chest\nd,other\n")
    pred.write_text("scan_id,label\na,abdomen\nb,abdomen\nc,chest\nd,other\n")
    assert cli.main(["evaluate", "--pred", str(pred), "--truth", str(truth), "--out", str(tmp_path / "r")]) == 0
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report["per_region"]["pelvis"] == pytest.approx({**report["per_region"]["pelvis"],
                                                            "tp": 0, "fn": 1, "fp": 0, "recall": 0.0})
    assert report["per_region"]["abdomen"]["precision"] == 1.0
    assert "Pelvis" in capsys.readouterr().out


def test_mllm_mode_without_backend(corpus):
    with pytest.raises(BadConfig):
        cli.run(cli.RunConfig("CT", [str(corpus)], mode="mllm-plain"))
    assert cli.main(["classify", str(corpus), "--modality", "ct", "--mode", "mllm-plain"]) == 2


def test_no_inputs(tmp_path):
    with pytest.raises(NoInputs):
        cli.run(cli.RunConfig("CT", [str(tmp_path)]))
    assert cli.main(["classify", str(tmp_path / "missing"), "--modality", "ct"]) == 3


def test_per_scan_failure_is_recorded(corpus, tmp_path):
    bad = tmp_path / "in"
    bad.mkdir()
    (bad / "broken.nii").write_bytes(b"not a nifti file")
    (bad / "good.nii.gz").write_bytes((corpus / "phantom_0000.nii.gz").read_bytes())
    assert cli.main(["classify", str(bad), "--modality", "ct", "--out", str(tmp_path / "o")]) == 0
    recs = {r["scan_id"]: r for r in _records(tmp_path / "o")}
    assert recs["broken"]["label"] == "other" and recs["broken"]["flags"] == ["MalformedHeader"]
    assert recs["good"]["flags"] == []


def test_mllm_mock_modes(corpus, tmp_path):
    out = tmp_path / "m"
    assert cli.main(["classify", str(corpus / "images"), "--modality", "ct", "--mode", "mllm-plain",
                     "--mock", "FINAL: chest", "--out", str(out)]) == 0
    assert {r["label"] for r in _records(out)} == {"chest"}
    out = tmp_path / "s"
    assert cli.main(["classify", str(corpus / "images"), "--modality", "ct", "--mode", "mllm-seg-aware",
                     "--mock", "evidence", "--labels-dir", str(corpus), "--out", str(out),
                     "--transcripts", str(tmp_path / "t")]) == 0
    assert len(_records(out)) == 8
    assert len(list((tmp_path / "t").glob("*.json"))) == 8


def test_seg_aware_needs_labels(corpus):
    with pytest.raises(BadConfig):
        cli.RunConfig("CT", [str(corpus)], mode="mllm-seg-aware", mock="evidence").validate()


def test_custom_taxonomy_and_policy(corpus, tmp_path):
    tax = tmp_path / "t.yaml"
    tax.write_text(yaml.safe_dump({"rules": {"abdomen": {"vertebra_threshold": 0.5}}}))
    out = tmp_path / "o"
    assert cli.main(["classify", str(corpus), "--modality", "ct", "--taxonomy", str(tax), "--policy",
                     "threshold-all", "--tau", "0.5", "--out", str(out)]) == 0
    assert _records(out)[0]["config"]["policy"] == "threshold_all"
    assert cli.main(["classify", str(corpus), "--modality", "ct", "--tau", "1.5"]) == 2


def test_inspect_render_prompt_dump(corpus, tmp_path, capsys):
    assert cli.main(["inspect", str(corpus / "phantom_0000.nii.gz"), "--modality", "ct",
                     "--out", str(tmp_path / "i.json")]) == 0
    report = json.loads((tmp_path / "i.json").read_text())
    assert {"index", "measurements", "assessments", "label"} <= set(report)
    assert cli.main(["render-views", str(corpus / "images" / "phantom_0000.nii.gz"),
                     "--out", str(tmp_path / "v.png")]) == 0
    assert (tmp_path / "v.png").read_bytes().startswith(b"\x89PNG")
    assert cli.main(["build-prompt", "--modality", "ct", "--mode", "seg-aware",
                     "--labels", str(corpus / "phantom_0000.nii.gz"), "--out", str(tmp_path / "p")]) == 0
    assert "SEGMENTATION EVIDENCE" in (tmp_path / "p" / "user.txt").read_text()
    assert cli.main(["build-prompt", "--modality", "ct", "--mode", "seg-aware"]) == 2
    capsys.readouterr()
    assert cli.main(["taxonomy", "dump", "--modality", "mr"]) == 0
    assert yaml.safe_load(capsys.readouterr().out)["modality"] == "MR"


def test_io_error_exit_code(tmp_path):
    assert cli.main(["inspect", str(tmp_path / "nope.nii"), "--modality", "ct"]) == 4
