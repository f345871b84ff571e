"""Brute-force reference computations straight from raw voxels.

Deliberately naive: python loops over slices and classes, no shared code
with the analysis or decision modules. Only the taxonomy tables are reused.
"""

from __future__ import annotations

import numpy as np

REGIONS = ("head", "neck", "chest", "abdomen", "pelvis")


def slice_ranges(labels: np.ndarray) -> dict[int, tuple[int, int, int]]:
    """class id -> (first slice, last slice, voxel count), axis 2 being SI."""
    out = {}
    for z in range(labels.shape[2]):
        for c in np.unique(labels[:, :, z]):
            c = int(c)
            if c == 0:
                continue
            n = int(np.count_nonzero(labels[:, :, z] == c))
            if c in out:
                lo, _, total = out[c]
                out[c] = (lo, z, total + n)
            else:
                out[c] = (z, z, n)
    return out


def named_presence(labels, tax, min_voxels):
    pooled = {}
    for c, (lo, hi, n) in slice_ranges(labels).items():
        name = tax.class_names.get(c)
        if name is None:
            continue
        if name in pooled:
            a, b, m = pooled[name]
            lo, hi, n = min(a, lo), max(b, hi), m + n
        pooled[name] = (lo, hi, n)
    return {k: v for k, v in pooled.items() if v[2] >= min_voxels}


def region_numbers(labels, spacing_z_mm, tax, min_voxels=10):
    present = named_presence(labels, tax, min_voxels)
    out = {}
    for r in REGIONS:
        rule = tax.rules[r]
        verts = [n for n in rule.expected_vertebrae if n in present]
        organs = [present[n] for n in rule.expected_organs if n in present]
        extent = None
        if organs:
            lo = min(o[0] for o in organs)
            hi = max(o[1] for o in organs)
            extent = (hi - lo + 1) * spacing_z_mm / 10.0
        out[r] = {
            "vertebra_fraction": len(verts) / len(rule.expected_vertebrae) if rule.expected_vertebrae else 0.0,
            "organ_fraction": len(organs) / len(rule.expected_organs) if rule.expected_organs else 0.0,
            "organ_count": len(organs),
            "extent_cm": extent,
        }
    return out, present


def brute_force_label(labels, spacing_z_mm, tax, tau=2 / 3, min_voxels=10) -> str:
    numbers, present = region_numbers(labels, spacing_z_mm, tax, min_voxels)
    scores = {}
    for r in REGIONS:
        rule, m = tax.rules[r], numbers[r]
        wins = 0
        names = {c.value for c in rule.conditions}
        if "vertebrae" in names and m["vertebra_fraction"] + 1e-9 >= rule.vertebra_threshold:
            wins += 1
        if "organs" in names:
            if rule.organ_threshold_kind == "fraction":
                wins += m["organ_fraction"] + 1e-9 >= rule.organ_threshold
            else:
                wins += m["organ_count"] >= rule.organ_min_count
        if "extent" in names and m["extent_cm"] is not None:
            lo = rule.extent_window[0] * rule.extent_cm[0]
            hi = rule.extent_window[1] * rule.extent_cm[1]
            wins += lo - 1e-9 <= m["extent_cm"] <= hi + 1e-9
        scores[r] = wins / len(names)
    best = max(scores.values())
    if not present or best + 1e-9 < tau:
        return "other"
    return "+".join(r for r in REGIONS if abs(scores[r] - best) < 1e-9)


def naive_confusion(pairs, region):
    """(tp, fp, fn, tn) by a direct double loop over scans."""
    tp = fp = fn = tn = 0
    for pred, truth in pairs:
        p = (pred == "other") if region == "other" else region in pred.split("+")
        t = (truth == "other") if region == "other" else region in truth.split("+")
        tp += p and t
        fp += p and not t
        fn += t and not p
        tn += not p and not t
    return tp, fp, fn, tn


def paint(tax, structures, nz, spacing_z=5.0, per_slice=9, direction=None):
    """Label volume with each named structure filling a 3x3 column over slices [lo, hi]."""
    from bodyregion.volume_io import Volume

    side = 3 * max(1, int(np.ceil(np.sqrt(max(1, len(structures))))))
    data = np.zeros((side, side, nz), dtype=np.uint8)
    for k, (name, (lo, hi)) in enumerate(sorted(structures.items())):
        x, y = 3 * (k % (side // 3)), 3 * (k // (side // 3))
        cid = tax.ids_for(name)[0]
        cell = np.zeros(9, dtype=bool)
        cell[:per_slice] = True
        data[x:x + 3, y:y + 3, lo:hi + 1] = np.where(cell.reshape(3, 3)[..., None], cid, 0)
    return Volume(data, (2.0, 2.0, spacing_z), np.eye(3) if direction is None else direction)
