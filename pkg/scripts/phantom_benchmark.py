"""Phantom oracle benchmark: classify a seeded synthetic corpus and compare with the analytic labels.

    python scripts/phantom_benchmark.py --n 500 --modality MR --seed 3
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from collections import Counter

from bodyregion import phantoms
from bodyregion.decision import DecisionPolicy, classify_volume
from bodyregion.labels import format_label
from bodyregion.metrics import LabeledPrediction, evaluate, format_table
from bodyregion.taxonomy import builtin

log = logging.getLogger("phantom_benchmark")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--modality", choices=("CT", "MR"), default="CT")
    ap.add_argument("--tau", type=float, default=2 / 3)
    ap.add_argument("--json", help="write a summary JSON here")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    tax = builtin(args.modality)
    policy = DecisionPolicy(args.tau)
    t0 = time.perf_counter()
    corpus = phantoms.sample_corpus(args.n, args.seed, args.modality)
    t_gen = time.perf_counter() - t0
    pairs, mismatches, kinds = [], [], Counter()
    t0 = time.perf_counter()
    for i, (vol, expected, spec) in enumerate(corpus):
        got = classify_volume(vol, tax, policy).label
        kinds[spec.category] += 1
        pairs.append(LabeledPrediction(f"p{i:04d}", got, expected))
        if got != expected:
            mismatches.append({"index": i, "kind": spec.category,
                               "expected": format_label(expected), "got": format_label(got)})
    t_cls = time.perf_counter() - t0

    report = evaluate(pairs)
    print(format_table(report), end="")
    log.info("kinds: %s", dict(sorted(kinds.items())))
    log.info("generation %.2fs, classification %.2fs, agreement %d/%d",
             t_gen, t_cls, args.n - len(mismatches), args.n)
    for m in mismatches[:20]:
        log.info("mismatch %s", m)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"n": args.n, "seed": args.seed, "modality": args.modality, "mismatches": mismatches,
                       "seconds": {"generate": t_gen, "classify": t_cls}, "report": report.to_dict()}, fh, indent=2)
    return 1 if mismatches else 0


if __name__ == "__main__":
    raise SystemExit(main())
