"""Synthetic label phantoms with analytically known region labels.

Every structure is an axis-aligned box: a fixed in-plane cell over a range
of axial slices. That is all the pipeline looks at (slice ranges and voxel
counts), so the expected label can be derived from the placement list alone. The
derivation below uses exact rational arithmetic and shares no code with
:mod:`bodyregion.analysis` or :mod:`bodyregion.decision`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import SpecOverflow
from .labels import REGIONS, RegionSet
from .taxonomy import FRACTION, Condition, Taxonomy, builtin, normalize_modality
from .volume_io import INTENSITY, LABEL, Volume

DEFAULT_SPACING = (2.0, 2.0, 5.0)


@dataclass(frozen=True)
class PlacedStructure:
    name: str
    start_cm: float  # above the inferior volume boundary
    end_cm: float
    density: float = 1.0


@dataclass(frozen=True)
class PhantomSpec:
    modality: str
    structures: tuple
    spacing: tuple = DEFAULT_SPACING
    dims: tuple | None = None
    cell: int = 3
    min_voxels: int = 10
    category: str = ""

    def __post_init__(self):
        object.__setattr__(self, "modality", normalize_modality(self.modality))
        object.__setattr__(self, "structures", tuple(self.structures))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if self.dims is None:
            side = self.cell * max(1, math.ceil(math.sqrt(max(1, len(self.structures)))))
            top = max((s.end_cm for s in self.structures), default=1.0)
            nz = max(2, math.ceil(top * 10 / self.spacing[2]))
            object.__setattr__(self, "dims", (side, side, nz))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def slice_cm(self) -> float:
        return self.spacing[2] / 10.0

    @property
    def height_cm(self) -> float:
        return self.dims[2] * self.slice_cm

    def slice_range(self, s: PlacedStructure) -> tuple[int, int] | None:
        """Slices whose centre lies in [start_cm, end_cm]; None when no slice qualifies."""
        lo = max(0, math.ceil(s.start_cm / self.slice_cm - 0.5 - 1e-9))
        hi = min(self.dims[2] - 1, math.floor(s.end_cm / self.slice_cm - 0.5 + 1e-9))
        return (lo, hi) if lo <= hi else None

    def voxels_per_slice(self, s: PlacedStructure) -> int:
        return max(1, round(s.density * self.cell * self.cell))

    def placements(self) -> dict:
        """name -> (min slice, max slice, voxel count), pooled over same-named structures."""
        out = {}
        for s in self.structures:
            rng = self.slice_range(s)
            if rng is None:
                continue
            count = (rng[1] - rng[0] + 1) * self.voxels_per_slice(s)
            if s.name in out:
                lo, hi, c = out[s.name]
                rng, count = (min(lo, rng[0]), max(hi, rng[1])), count + c
            out[s.name] = (rng[0], rng[1], count)
        return out

    def expected_label(self, taxonomy: Taxonomy | None = None, tau: Fraction = Fraction(2, 3)) -> RegionSet:
        return expected_label(self, taxonomy, tau)


def expected_label(spec: PhantomSpec, taxonomy: Taxonomy | None = None,
                   tau: Fraction = Fraction(2, 3)) -> RegionSet:
    """Region label implied by the rule table for ``spec``, computed in exact arithmetic."""
    tax = taxonomy or builtin(spec.modality)
    present = {n: v for n, v in spec.placements().items() if v[2] >= spec.min_voxels}
    slice_cm = Fraction(spec.spacing[2]).limit_denominator(10**6) / 10
    scores = {}
    for region in REGIONS:
        rule = tax.rules[region]
        wins = 0
        if Condition.VERTEBRAE in rule.conditions:
            exp = rule.expected_vertebrae
            hit = sum(1 for n in exp if n in present)
            wins += bool(exp) and Fraction(hit, len(exp)) >= _q(rule.vertebra_threshold)
        organs = [present[n] for n in rule.expected_organs if n in present]
        if Condition.ORGANS in rule.conditions:
            if rule.organ_threshold_kind == FRACTION:
                wins += Fraction(len(organs), len(rule.expected_organs)) >= _q(rule.organ_threshold)
            else:
                wins += len(organs) >= rule.organ_min_count
        if Condition.EXTENT in rule.conditions and organs:
            span = max(o[1] for o in organs) - min(o[0] for o in organs) + 1
            extent = span * slice_cm
            lo = _q(rule.extent_window[0]) * _q(rule.extent_cm[0])
            hi = _q(rule.extent_window[1]) * _q(rule.extent_cm[1])
            wins += lo <= extent <= hi
        scores[region] = Fraction(int(wins), len(rule.conditions))
    best = max(scores.values())
    if not present or best < tau:
        return RegionSet.other()
    return RegionSet(frozenset(r for r in REGIONS if scores[r] == best))


def _q(x: float) -> Fraction:
    return Fraction(str(x))


def generate(spec: PhantomSpec, seed: int = 0, taxonomy: Taxonomy | None = None) -> Volume:
    """Deterministic canonical label volume for ``(spec, seed)``."""
    tax = taxonomy or builtin(spec.modality)
    nx, ny, nz = spec.dims
    cols, rows = nx // spec.cell, ny // spec.cell
    if len(spec.structures) > cols * rows:
        raise SpecOverflow(f"{len(spec.structures)} structures do not fit a {cols}x{rows} cell grid")
    for s in spec.structures:
        if s.start_cm < 0 or s.end_cm > spec.height_cm + 1e-9 or s.start_cm > s.end_cm:
            raise SpecOverflow(f"{s.name} [{s.start_cm}, {s.end_cm}] cm outside 0..{spec.height_cm} cm")
        if not 0 < s.density <= 1:
            raise SpecOverflow(f"{s.name}: density {s.density} outside (0, 1]")
    rng = np.random.default_rng(seed)
    ids = [tax.ids_for(s.name)[0] for s in spec.structures]
    dtype = np.uint8 if max(ids, default=0) < 256 else np.int16
    vox = np.zeros(spec.dims, dtype=dtype)
    area = spec.cell * spec.cell
    for i, (s, cid) in enumerate(zip(spec.structures, ids)):
        sr = spec.slice_range(s)
        if sr is None:
            continue
        x0, y0 = (i % cols) * spec.cell, (i // cols) * spec.cell
        k = spec.voxels_per_slice(s)
        block = vox[x0:x0 + spec.cell, y0:y0 + spec.cell, sr[0]:sr[1] + 1]
        if k == area:
            block[...] = cid
            continue
        for j in range(block.shape[2]):
            xs, ys = np.divmod(rng.choice(area, size=k, replace=False), spec.cell)
            block[xs, ys, j] = cid
    return Volume(vox, spec.spacing, np.eye(3), (0.0, 0.0, 0.0), LABEL)


def intensity_fill(v: Volume, background: float = -1000.0) -> Volume:
    """Constant-per-class intensity volume (pseudo HU) for rendering tests."""
    labels = np.asarray(v.voxels).astype(np.int64)
    lut = background + np.zeros(int(labels.max(initial=0)) + 1, dtype=np.float32)
    lut[1:] = (np.arange(1, lut.size) * 37) % 300 - 100
    return Volume(lut[labels].astype(np.float32), v.spacing, v.direction, v.origin, INTENSITY)


# ---------------------------------------------------------------- body layouts
# Structure positions in cm below the vertex of a standing adult.

def _ct_layout() -> dict:
    lay = {"skull": (0, 20), "brain": (2, 15)}
    lay.update(_spine(include_s1=True))
    lay.update({
        "thyroid_gland": (20, 24), "trachea": (18, 30), "esophagus": (18, 30),
        "lung_upper_lobe_left": (27, 40), "lung_upper_lobe_right": (27, 40),
        "lung_middle_lobe_right": (36, 44),
        "lung_lower_lobe_left": (38, 50), "lung_lower_lobe_right": (38, 50),
        "heart": (35, 47), "sternum": (29, 45), "costal_cartilages": (33, 50),
    })
    for k in range(1, 13):
        lay[f"rib_left_{k}"] = lay[f"rib_right_{k}"] = (26 + 2 * (k - 1), 29 + 2 * (k - 1))
    lay.update(_ABDOMEN_PELVIS)
    lay.update({"femur_left": (78, 125), "femur_right": (78, 125),
                "humerus_left": (27, 58), "humerus_right": (27, 58)})
    return lay


def _mr_layout() -> dict:
    lay = {"brain": (2, 15), "esophagus": (18, 30)}
    lay.update(_spine(include_s1=False))
    lay.update({"lung_left": (27, 50), "lung_right": (27, 50), "heart": (35, 47)})
    lay.update(_ABDOMEN_PELVIS)
    lay.update({"femur_left": (78, 125), "femur_right": (78, 125),
                "humerus_left": (27, 58), "humerus_right": (27, 58)})
    return lay


_ABDOMEN_PELVIS = {
    "liver": (45, 62), "spleen": (46, 56), "kidney_right": (51, 62), "kidney_left": (50, 61),
    "gallbladder": (53, 57), "stomach": (46, 58), "pancreas": (52, 56), "duodenum": (53, 60),
    "colon": (54, 70),
    "hip_left": (62, 80), "hip_right": (62, 80), "urinary_bladder": (72, 80), "prostate": (78, 82),
}


def _spine(include_s1: bool) -> dict:
    out = {}
    z = 16.0
    for name, h in ([(f"vertebrae_C{i}", 1.5) for i in range(1, 8)]
                    + [(f"vertebrae_T{i}", 2.0) for i in range(1, 13)]
                    + [(f"vertebrae_L{i}", 3.0) for i in range(1, 6)]):
        out[name] = (z, z + h)
        z += h
    if include_s1:
        out["vertebrae_S1"] = (z, z + 2.5)
    out["sacrum"] = (z, z + 9.5)
    return out


LAYOUTS = {"CT": _ct_layout, "MR": _mr_layout}

# Body windows (cm below vertex) that cover each region per the boundary table.
REGION_WINDOWS = {
    "head": (0.0, 21.0),
    "neck": (14.0, 29.0),
    "chest": (25.0, 52.0),
    "abdomen": (43.0, 62.0),
    "pelvis": (60.0, 85.0),
}
EXTREMITY_WINDOWS = ((90.0, 120.0), (85.0, 110.0))


def spec_from_window(modality: str, top: float, bottom: float, spacing=DEFAULT_SPACING,
                     drop: frozenset = frozenset(), stretch: dict | None = None,
                     densities: dict | None = None, category: str = "",
                     layout: dict | None = None) -> PhantomSpec:
    """Crop the body layout to the window [top, bottom] (cm below vertex)."""
    modality = normalize_modality(modality)
    lay = dict(layout or LAYOUTS[modality]())
    for name, factor in (stretch or {}).items():
        a, b = lay[name]
        mid = (a + b) / 2
        lay[name] = (mid - (mid - a) * factor, mid + (b - mid) * factor)
    slice_cm = spacing[2] / 10.0
    nz = max(2, round((bottom - top) / slice_cm))
    height = nz * slice_cm
    structures = []
    for name, (a, b) in sorted(lay.items(), key=lambda kv: (kv[1], kv[0])):
        if name in drop:
            continue
        start, end = max(0.0, top + height - b), min(height, top + height - a)
        if end <= start:
            continue
        structures.append(PlacedStructure(name, round(start, 6), round(end, 6),
                                          (densities or {}).get(name, 1.0)))
    cell = 3
    side = cell * max(1, math.ceil(math.sqrt(max(1, len(structures)))))
    return PhantomSpec(modality, tuple(structures), tuple(spacing), (side, side, nz), cell,
                       category=category)


def abdomen_spec(modality: str = "CT", spacing=DEFAULT_SPACING) -> PhantomSpec:
    """Nine abdominal organs plus T8-T12/L1-L4, about 20 cm, nothing else."""
    lay = LAYOUTS[normalize_modality(modality)]()
    names = ["spleen", "kidney_right", "kidney_left", "gallbladder", "liver", "stomach",
             "pancreas", "duodenum", "colon"] + [f"vertebrae_T{i}" for i in range(8, 13)] \
        + [f"vertebrae_L{i}" for i in range(1, 5)]
    sub = {n: lay[n] for n in names}
    sub["colon"] = (54, 65)
    return spec_from_window(modality, 40.0, 66.0, spacing, layout=sub, category="abdomen")


def whole_body_spec(modality: str = "CT", spacing=DEFAULT_SPACING) -> PhantomSpec:
    return spec_from_window(modality, 0.0, 85.0, spacing, category="whole_body")


_SPACINGS = ((2.0, 2.0, 5.0), (1.5, 1.5, 10.0), (2.0, 2.0, 2.5))
_KINDS = ("single", "single", "multi", "whole", "truncated", "overscan", "extremity", "sliver")


def random_spec(rng: np.random.Generator, modality: str = "CT", kind: str | None = None) -> PhantomSpec:
    modality = normalize_modality(modality)
    kind = kind or str(rng.choice(_KINDS))
    spacing = _SPACINGS[int(rng.integers(len(_SPACINGS)))]
    jitter = lambda: float(rng.uniform(-1.5, 1.5))  # noqa: E731
    lay = LAYOUTS[modality]()
    drop = frozenset(n for n in lay if rng.random() < 0.08) if rng.random() < 0.4 else frozenset()
    densities = ({n: float(rng.uniform(0.3, 1.0)) for n in lay} if rng.random() < 0.3 else None)
    stretch = None
    if kind == "single":
        top, bottom = REGION_WINDOWS[str(rng.choice(REGIONS))]
    elif kind == "multi":
        i = int(rng.integers(0, 4))
        j = int(rng.integers(i + 1, 5))
        top, bottom = REGION_WINDOWS[REGIONS[i]][0], REGION_WINDOWS[REGIONS[j]][1]
    elif kind == "whole":
        top, bottom = 0.0, 85.0
    elif kind == "truncated":
        a, b = REGION_WINDOWS[str(rng.choice(REGIONS))]
        length = float(rng.uniform(4.0, 8.0))
        top = float(rng.uniform(a, max(a, b - length)))
        bottom = top + length
    elif kind == "overscan":
        region = str(rng.choice(REGIONS))
        a, b = REGION_WINDOWS[region]
        factor = float(rng.uniform(1.9, 2.4))
        tax = builtin(modality)
        stretch = {n: factor for n in tax.rules[region].expected_organs if n in lay}
        mid = (a + b) / 2
        top, bottom = max(0.0, mid - (mid - a) * factor), mid + (b - mid) * factor
    elif kind == "extremity":
        top, bottom = EXTREMITY_WINDOWS[int(rng.integers(len(EXTREMITY_WINDOWS)))]
    elif kind == "sliver":
        # 2-3 cm at a region boundary: too little of anything
        a, _ = REGION_WINDOWS[str(rng.choice(REGIONS[1:]))]
        top, bottom = a, a + float(rng.uniform(2.0, 3.0))
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    if kind not in ("extremity", "sliver", "truncated"):
        top, bottom = max(0.0, top + jitter()), bottom + jitter()
    return spec_from_window(modality, top, bottom, spacing, drop, stretch, densities, category=kind)


def sample_corpus(n: int, seed: int = 0, modality: str = "CT") -> list[tuple[Volume, RegionSet, PhantomSpec]]:
    """``n`` phantoms cycling through all scan kinds; deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    root = np.random.default_rng(seed)
    out = []
    for i, child in enumerate(root.spawn(n)):
        spec = random_spec(child, modality, _KINDS[i % len(_KINDS)])
        out.append((generate(spec, seed=int(child.integers(2**31))), spec.expected_label(), spec))
    return out


def with_min_voxels(spec: PhantomSpec, min_voxels: int) -> PhantomSpec:
    return replace(spec, min_voxels=min_voxels)
