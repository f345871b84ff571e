"""Rules pipeline on real segmentation label maps against manual region labels.

Needs label maps produced by the segmentation models for the public
dataset (not shipped here) and a ``scan_id,label`` ground-truth file.
Reports support-weighted and macro F1 next to a reference value.

    python scripts/integration_eval.py --labels-dir ct_labels/ --truth ct_truth.csv --modality CT --out runs/ct
    python scripts/integration_eval.py --labels-dir mr_total/ --vertebrae-dir mr_vert/ \\
        --truth mr_truth.csv --modality MR --out runs/mr
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from bodyregion import cli, metrics

REFERENCE_F1 = {"CT": 0.947, "MR": 0.914}
TOLERANCE = 0.02


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--labels-dir", required=True)
    ap.add_argument("--vertebrae-dir", help="MR only: separate vertebrae label maps, merged at offset 100")
    ap.add_argument("--truth", required=True)
    ap.add_argument("--modality", choices=("CT", "MR"), required=True)
    ap.add_argument("--taxonomy")
    ap.add_argument("--workers", type=int, default=8)
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)

    out = Path(args.out)
    cfg = cli.RunConfig(modality=args.modality, inputs=[args.labels_dir], taxonomy_path=args.taxonomy,
                        vertebrae_dir=args.vertebrae_dir, workers=args.workers, out=str(out))
    cli.run(cfg)
    report = metrics.evaluate(metrics.pair_files(out / "records.jsonl", args.truth))
    metrics.export_report(report, out)
    sys.stdout.write(metrics.format_table(report))
    ref = REFERENCE_F1[args.modality]
    verdict = {
        "reference": ref,
        "tolerance": TOLERANCE,
        "weighted_f1": report.weighted_f1,
        "macro_f1": report.macro_f1,
        "weighted_within": abs(report.weighted_f1 - ref) <= TOLERANCE,
        "macro_within": abs(report.macro_f1 - ref) <= TOLERANCE,
    }
    (out / "integration.json").write_text(json.dumps(verdict, indent=2) + "\n")
    print(json.dumps(verdict, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
