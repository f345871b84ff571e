"""render -> prompt -> model -> parse, for single scans and concurrent batches."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from ..analysis import MIN_VOXELS, EdgeReport, measure
from ..decision import ClassificationResult
from ..errors import EmptyVolume, MissingEvidence, TransportError, Unparseable
from ..labels import RegionSet
from ..taxonomy import Taxonomy
from ..volume_io import Volume, build_presence_index, canonicalize
from .client import ModelClient
from .prompt import PLAIN, SEGMENTATION_AWARE, AnatomicalEvidence, PromptBundle, build_prompt, parse_response
from .render import render_views

logger = logging.getLogger(__name__)

MODE_NAMES = {PLAIN: "mllm-plain", SEGMENTATION_AWARE: "mllm-seg-aware"}


def write_transcript(directory, scan_id: str, bundle: PromptBundle, raw: str | None,
                     error: str | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if bundle.image is not None:
        bundle.image.save_png(d / f"{scan_id}.png")
    path = d / f"{scan_id}.json"
    path.write_text(json.dumps({
        "scan_id": scan_id,
        "mode": bundle.mode,
        "system": bundle.system_text,
        "user": bundle.user_text,
        "response": raw,
        "error": error,
    }, indent=2) + "\n")
    return path


def classify_via_mllm(client: ModelClient, intensity: Volume, taxonomy: Taxonomy, mode: str = PLAIN,
                      label_volume: Volume | None = None, scan_id: str = "scan",
                      min_voxels: int = MIN_VOXELS, window="default", height: int = 256,
                      projection: str = "mid", transcript_dir=None) -> ClassificationResult:
    """One scan through the MLLM pipeline.

    Unparseable answers become ``other`` with the ``parse_failure`` flag;
    transport errors propagate as :class:`TransportError` carrying ``scan_id``.
    """
    evidence, edge, flags = None, EdgeReport(), set()
    if mode == SEGMENTATION_AWARE:
        if label_volume is None:
            raise MissingEvidence(f"[{scan_id}] segmentation-aware mode needs a label volume")
        try:
            m = measure(build_presence_index(canonicalize(label_volume)), taxonomy, min_voxels)
            evidence, edge = AnatomicalEvidence.from_measurements(m), m.edge
        except EmptyVolume:
            evidence = AnatomicalEvidence((), {})
            flags.add("empty_volume")
    image = render_views(canonicalize(intensity), taxonomy.modality, window, height, projection)
    bundle = build_prompt(taxonomy, mode, evidence, image)
    try:
        raw = client.send(bundle)
    except TransportError as exc:
        if transcript_dir is not None:
            write_transcript(transcript_dir, scan_id, bundle, None, str(exc))
        raise TransportError(str(exc), scan_id) from exc
    except Exception as exc:  # client bugs and socket errors alike
        if transcript_dir is not None:
            write_transcript(transcript_dir, scan_id, bundle, None, repr(exc))
        raise TransportError(repr(exc), scan_id) from exc
    if transcript_dir is not None:
        write_transcript(transcript_dir, scan_id, bundle, raw)
    try:
        label = parse_response(raw)
    except Unparseable:
        logger.info("[%s] unparseable answer; labelled as other", scan_id)
        label, flags = RegionSet.other(), flags | {"parse_failure"}
    return ClassificationResult(label, {}, edge, None, None, MODE_NAMES[mode], frozenset(flags))


def classify_batch_via_mllm(client: ModelClient, items, taxonomy: Taxonomy, mode: str = PLAIN,
                            max_in_flight: int = 4, **kwargs) -> list[tuple[str, ClassificationResult]]:
    """Classify ``(scan_id, intensity, label_volume_or_None)`` items concurrently.

    Output is sorted by scan id. A failing scan is recorded as ``other`` with
    a ``transport_error`` flag instead of stopping the batch.
    """
    items = list(items)

    def run(item):
        scan_id, intensity, labels = item
        try:
            return classify_via_mllm(client, intensity, taxonomy, mode, labels, scan_id, **kwargs)
        except TransportError as exc:
            logger.error("%s", exc)
            return ClassificationResult(RegionSet.other(), mode=MODE_NAMES[mode],
                                        flags=frozenset({"transport_error"}))

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = list(pool.map(run, items))
    return sorted(((item[0], res) for item, res in zip(items, results)), key=lambda t: t[0])
