"""Command line entry point: ``bodyregion <subcommand>``.

Exit codes: 0 success, 2 bad configuration or usage, 3 no inputs, 4 I/O error.
Per-scan failures never change the exit code; they are recorded as
``other`` with a diagnostic flag.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import metrics, phantoms
from .analysis import MIN_VOXELS, measure
from .decision import MAX_SCORE, THRESHOLD_ALL, DecisionPolicy, classify_measurements, classify_volume
from .errors import BadConfig, BodyRegionError, EmptyVolume, NoInputs
from .labels import RegionSet
from .taxonomy import Taxonomy, builtin, load_override, normalize_modality
from .volume_io import INTENSITY, LABEL, build_presence_index, canonicalize, load_volume, merge_label_maps

logger = logging.getLogger("bodyregion")

EXIT_OK, EXIT_CONFIG, EXIT_NO_INPUTS, EXIT_IO = 0, 2, 3, 4
MODES = ("rules", "mllm-plain", "mllm-seg-aware")
NIFTI_SUFFIXES = (".nii", ".nii.gz")


def scan_id_of(path: Path) -> str:
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def collect_inputs(paths) -> list[Path]:
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found += [f for f in p.iterdir() if f.name.endswith(NIFTI_SUFFIXES)]
        elif p.exists():
            found.append(p)
        else:
            raise NoInputs(f"input {p} does not exist")
    return sorted(set(found))


@dataclass
class RunConfig:
    modality: str
    inputs: list
    mode: str = "rules"
    taxonomy_path: str | None = None
    policy: str = MAX_SCORE
    tau: float = 2 / 3
    min_voxels: int = MIN_VOXELS
    window: str = "default"
    mock: str | None = None
    backend: str | None = None
    labels_dir: str | None = None
    vertebrae_dir: str | None = None
    out: str | None = None
    transcripts: str | None = None
    workers: int = 4
    extra: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        self.modality = normalize_modality(self.modality)
        if self.mode not in MODES:
            raise BadConfig(f"unknown mode {self.mode!r}")
        if self.mode != "rules" and not (self.mock or self.backend):
            raise BadConfig(f"mode {self.mode} needs --backend or --mock")
        if self.mode == "mllm-seg-aware" and not self.labels_dir:
            raise BadConfig("mode mllm-seg-aware needs --labels-dir with the label maps")
        if not 0 < self.tau <= 1:
            raise BadConfig(f"--tau must be in (0, 1], got {self.tau}")
        if self.min_voxels < 1:
            raise BadConfig("--min-voxels must be >= 1")
        if not self.inputs:
            raise NoInputs("no input volumes")
        return self

    def echo(self) -> dict:
        d = asdict(self)
        d["inputs"] = len(self.inputs)
        return d


def _taxonomy(modality: str, path: str | None) -> Taxonomy:
    return load_override(path, modality) if path else builtin(modality)


def _parse_window(text: str):
    if text in ("default", "auto"):
        return text
    try:
        c, w = (float(x) for x in text.split(","))
    except ValueError:
        raise BadConfig(f"--window expects 'default', 'auto' or CENTER,WIDTH; got {text!r}") from None
    return (c, w)


def _load_labels(path: Path, cfg: RunConfig):
    vol = load_volume(path, LABEL)
    if cfg.vertebrae_dir:
        vpath = _match(Path(cfg.vertebrae_dir), scan_id_of(path))
        if vpath is not None:
            vol = merge_label_maps(vol, load_volume(vpath, LABEL))
    return vol


def _match(directory: Path, scan_id: str) -> Path | None:
    for suffix in NIFTI_SUFFIXES:
        p = directory / f"{scan_id}{suffix}"
        if p.exists():
            return p
    return None


def _rules_record(path: Path, cfg: RunConfig, tax: Taxonomy, policy: DecisionPolicy) -> dict:
    rec = {"scan_id": scan_id_of(path), "path": str(path)}
    try:
        result = classify_volume(_load_labels(path, cfg), tax, policy, cfg.min_voxels)
        rec.update(result.to_dict())
    except BodyRegionError as exc:
        rec.update(label="other", flags=[type(exc).__name__], error=str(exc), scores={}, truncation_flags={})
    except OSError as exc:
        rec.update(label="other", flags=["io_error"], error=str(exc), scores={}, truncation_flags={})
    return rec


def _mllm_records(paths, cfg: RunConfig, tax: Taxonomy) -> list[dict]:
    from .mllm import BackendConfig, HttpClient, MockClient, evidence_top_region
    from .mllm.pipeline import MODE_NAMES, classify_via_mllm
    from .mllm.prompt import PLAIN, SEGMENTATION_AWARE

    if cfg.mock:
        client = MockClient(evidence_top_region if cfg.mock == "evidence" else cfg.mock)
    else:
        client = HttpClient(BackendConfig.load(cfg.backend))
    mode = PLAIN if cfg.mode == "mllm-plain" else SEGMENTATION_AWARE
    window = _parse_window(cfg.window)

    def run(path: Path) -> dict:
        sid = scan_id_of(path)
        rec = {"scan_id": sid, "path": str(path)}
        try:
            labels = None
            if mode == SEGMENTATION_AWARE:
                lpath = _match(Path(cfg.labels_dir), sid)
                if lpath is None:
                    raise EmptyVolume(f"no label map for {sid} in {cfg.labels_dir}")
                labels = _load_labels(lpath, cfg)
            result = classify_via_mllm(client, load_volume(path, INTENSITY), tax, mode, labels, sid,
                                       cfg.min_voxels, window, transcript_dir=cfg.transcripts)
            rec.update(result.to_dict())
        except (BodyRegionError, OSError) as exc:
            rec.update(label="other", mode=MODE_NAMES[mode], flags=[type(exc).__name__],
                       error=str(exc), scores={}, truncation_flags={})
        return rec

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        return list(pool.map(run, paths))


def run(cfg: RunConfig) -> tuple[int, list[dict]]:
    """Classify every input; write ``records.jsonl`` and ``summary.json`` when ``cfg.out`` is set."""
    cfg.validate()
    tax = _taxonomy(cfg.modality, cfg.taxonomy_path)
    policy = DecisionPolicy(cfg.tau, cfg.policy)
    paths = collect_inputs(cfg.inputs)
    if not paths:
        raise NoInputs("no NIfTI files among the inputs")
    if cfg.mode == "rules":
        with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
            records = list(pool.map(lambda p: _rules_record(p, cfg, tax, policy), paths))
    else:
        records = _mllm_records(paths, cfg, tax)
    echo = cfg.echo()
    for rec in records:
        rec["config"] = echo
    summary = {
        "n_scans": len(records),
        "labels": dict(sorted(Counter(r["label"] for r in records).items())),
        "n_flagged": sum(bool(r.get("flags")) for r in records),
        "config": echo,
    }
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "records.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    else:
        for r in records:
            print(json.dumps(r, sort_keys=True))
    print(json.dumps({k: summary[k] for k in ("n_scans", "labels", "n_flagged")}), file=sys.stderr)
    return EXIT_OK, records


# ---------------------------------------------------------------- subcommands

def cmd_classify(args) -> int:
    cfg = RunConfig(
        modality=args.modality, inputs=args.inputs, mode=args.mode, taxonomy_path=args.taxonomy,
        policy=args.policy.replace("-", "_"), tau=args.tau, min_voxels=args.min_voxels,
        window=args.window, mock=args.mock, backend=args.backend, labels_dir=args.labels_dir,
        vertebrae_dir=args.vertebrae_dir, out=args.out, transcripts=args.transcripts,
        workers=args.workers,
    )
    return run(cfg)[0]


def cmd_evaluate(args) -> int:
    pairs = metrics.pair_files(args.pred, args.truth)
    report = metrics.evaluate(pairs, exclude_other=args.exclude_other)
    if args.out:
        metrics.export_report(report, args.out)
    sys.stdout.write(metrics.format_table(report))
    return EXIT_OK


def cmd_inspect(args) -> int:
    tax = _taxonomy(args.modality, args.taxonomy)
    vol = canonicalize(load_volume(args.input, LABEL))
    try:
        index = build_presence_index(vol)
    except EmptyVolume:
        report = {"scan_id": scan_id_of(Path(args.input)), "empty": True}
    else:
        m = measure(index, tax, args.min_voxels)
        result = classify_measurements(m, tax)
        report = {
            "scan_id": scan_id_of(Path(args.input)),
            "index": index.to_dict(),
            "class_names": {int(c): tax.name_of(c) for c in sorted(index.per_class)},
            "measurements": m.to_dict(),
            "assessments": {r: a.to_dict() for r, a in result.assessments.items()},
            "label": str(result.label),
        }
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_render(args) -> int:
    from .mllm import render_views

    vol = canonicalize(load_volume(args.input, INTENSITY))
    img = render_views(vol, args.modality, _parse_window(args.window), args.height, args.projection)
    img.save_png(args.out)
    print(f"wrote {args.out} ({img.width}x{img.height}, panels at {list(img.panel_boundaries)})")
    return EXIT_OK


def cmd_build_prompt(args) -> int:
    from .mllm import AnatomicalEvidence, build_prompt
    from .mllm.prompt import PLAIN, SEGMENTATION_AWARE

    tax = _taxonomy(args.modality, args.taxonomy)
    mode = SEGMENTATION_AWARE if args.mode == "seg-aware" else PLAIN
    evidence = None
    if mode == SEGMENTATION_AWARE:
        if not args.labels:
            raise BadConfig("--mode seg-aware needs --labels")
        m = measure(build_presence_index(canonicalize(load_volume(args.labels, LABEL))), tax, args.min_voxels)
        evidence = AnatomicalEvidence.from_measurements(m)
    bundle = build_prompt(tax, mode, evidence)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "system.txt").write_text(bundle.system_text + "\n")
        (out / "user.txt").write_text(bundle.user_text + "\n")
    else:
        print("=== system ===\n" + bundle.system_text + "\n=== user ===\n" + bundle.user_text)
    return EXIT_OK


def cmd_taxonomy_dump(args) -> int:
    sys.stdout.write(_taxonomy(args.modality, args.taxonomy).dump())
    return EXIT_OK


def cmd_phantom_generate(args) -> int:
    from .volume_io import save_volume

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = phantoms.sample_corpus(args.n, args.seed, args.modality)
    rows = []
    for i, (vol, expected, spec) in enumerate(corpus):
        sid = f"phantom_{i:04d}"
        save_volume(vol, out / f"{sid}.nii.gz")
        if args.intensity:
            (out / "images").mkdir(exist_ok=True)
            save_volume(phantoms.intensity_fill(vol), out / "images" / f"{sid}.nii.gz")
        rows.append((sid, str(expected), spec.category))
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scan_id", "label", "kind"])
        w.writerows(rows)
    print(f"wrote {len(rows)} phantoms to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bodyregion", description="Body region detection from label maps.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, modality_required=True):
        sp.add_argument("--modality", type=str.lower, choices=("ct", "mr"), required=modality_required,
                        default=None if modality_required else "ct")
        sp.add_argument("--taxonomy", help="YAML taxonomy override file")
        sp.add_argument("--min-voxels", type=int, default=MIN_VOXELS)

    c = sub.add_parser("classify", help="classify label maps (or images in MLLM modes)")
    c.add_argument("inputs", nargs="+", help="NIfTI files or directories")
    common(c)
    c.add_argument("--mode", choices=MODES, default="rules")
    c.add_argument("--policy", choices=("max-score", "threshold-all"), default="max-score")
    c.add_argument("--tau", type=float, default=2 / 3)
    c.add_argument("--window", default="default", help="'default', 'auto' or CENTER,WIDTH")
    c.add_argument("--mock", help="mock model: fixed answer text, or 'evidence' for the top-extent rule")
    c.add_argument("--backend", help="YAML backend config (endpoint, model, token_env)")
    c.add_argument("--labels-dir", help="label maps matched by scan id (mllm-seg-aware)")
    c.add_argument("--vertebrae-dir", help="MR: vertebrae label maps merged into the organ maps")
    c.add_argument("--transcripts", help="directory for per-scan request/response transcripts")
    c.add_argument("--workers", type=int, default=4)
    c.add_argument("--out", help="output directory (records.jsonl, summary.json); stdout if omitted")
    c.set_defaults(func=cmd_classify)

    e = sub.add_parser("evaluate", help="per-region metrics of predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out")
    e.add_argument("--exclude-other", action="store_true", help="leave 'other' out of averaged F1")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("inspect", help="full measurement report for one label map")
    i.add_argument("input")
    common(i)
    i.add_argument("--out")
    i.set_defaults(func=cmd_inspect)

    r = sub.add_parser("render-views", help="write the axial|sagittal|coronal composite PNG")
    r.add_argument("input")
    r.add_argument("--modality", type=str.upper, choices=("CT", "MR"), default="CT")
    r.add_argument("--window", default="default")
    r.add_argument("--height", type=int, default=256)
    r.add_argument("--projection", choices=("mid", "mip", "mean"), default="mid")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    b = sub.add_parser("build-prompt", help="dump the system and user prompt texts")
    common(b)
    b.add_argument("--mode", choices=("plain", "seg-aware"), default="plain")
    b.add_argument("--labels", help="label map providing evidence (seg-aware)")
    b.add_argument("--out", help="directory for system.txt and user.txt")
    b.set_defaults(func=cmd_build_prompt)

    t = sub.add_parser("taxonomy", help="taxonomy utilities")
    tsub = t.add_subparsers(dest="action", required=True)
    td = tsub.add_parser("dump", help="print the active taxonomy as YAML")
    common(td)
    td.set_defaults(func=cmd_taxonomy_dump)

    ph = sub.add_parser("phantom", help="synthetic phantoms")
    phsub = ph.add_subparsers(dest="action", required=True)
    pg = phsub.add_parser("generate", help="write a phantom corpus with truth.csv")
    pg.add_argument("--modality", type=str.upper, choices=("CT", "MR"), default="CT")
    pg.add_argument("--n", type=int, default=20)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--intensity", action="store_true", help="also write constant-fill intensity volumes")
    pg.add_argument("--out", required=True)
    pg.set_defaults(func=cmd_phantom_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NoInputs as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_INPUTS
    except BodyRegionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
