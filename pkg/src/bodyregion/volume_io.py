"""NIfTI-1 reading/writing, orientation canonicalization and the slice presence index.

The reader handles single-file (``n+1``) and header/image pair (``ni1``)
NIfTI-1, either byte order, optionally gzip-compressed. After
:func:`canonicalize`, array axes follow the RAS+ world axes, so axis 2 runs
from inferior to superior and every slice along it is an axial slice.
"""

from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyVolume,
    MalformedHeader,
    NotALabelMap,
    ObliqueVolume,
    UnsupportedDatatype,
)

logger = logging.getLogger(__name__)

LABEL = "label"
INTENSITY = "intensity"

# NIfTI datatype code -> numpy dtype character
DATATYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8", 512: "u2"}
DTYPE_CODES = {np.dtype(v).str[1:]: k for k, v in DATATYPES.items()}
LABEL_DATATYPES = frozenset({2, 4, 8, 512})
INTENSITY_DATATYPES = frozenset({4, 16, 64})
_FLOAT_DATATYPES = frozenset({16, 64})

OBLIQUE_THRESHOLD = 0.7
_QUAT_EPS = 3 * float(np.finfo(np.float32).eps)

_HEADER_FORMAT = (
    "i10s18sihcB8h3fhhhh8f3fhBBffffii80s24shh3f3f4f4f4f16s4s"
)
_HEADER_FIELDS = (
    ["sizeof_hdr", "data_type", "db_name", "extents", "session_error", "regular", "dim_info"]
    + [f"dim{i}" for i in range(8)]
    + ["intent_p1", "intent_p2", "intent_p3", "intent_code", "datatype", "bitpix", "slice_start"]
    + [f"pixdim{i}" for i in range(8)]
    + ["vox_offset", "scl_slope", "scl_inter", "slice_end", "slice_code", "xyzt_units",
       "cal_max", "cal_min", "slice_duration", "toffset", "glmax", "glmin", "descrip", "aux_file",
       "qform_code", "sform_code", "quatern_b", "quatern_c", "quatern_d",
       "qoffset_x", "qoffset_y", "qoffset_z"]
    + [f"srow_x{i}" for i in range(4)] + [f"srow_y{i}" for i in range(4)]
    + [f"srow_z{i}" for i in range(4)]
    + ["intent_name", "magic"]
)
assert struct.calcsize("<" + _HEADER_FORMAT) == 348


@dataclass(frozen=True, eq=False)
class Volume:
    """Voxel grid with spacing (mm), direction cosines (columns) and origin (mm)."""

    voxels: np.ndarray
    spacing: tuple
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))
    origin: tuple = (0.0, 0.0, 0.0)
    kind: str = LABEL

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.ndim != 3:
            raise DimensionMismatch(f"expected a 3D array, got shape {vox.shape}")
        vox = vox.view()
        vox.flags.writeable = False
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(not s > 0 for s in spacing):
            raise MalformedHeader(f"spacing must be 3 positive values, got {self.spacing}")
        direction = np.array(self.direction, dtype=float).reshape(3, 3)
        direction.flags.writeable = False
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if self.kind not in (LABEL, INTENSITY):
            raise ValueError(f"kind must be 'label' or 'intensity', got {self.kind!r}")

    @property
    def dims(self) -> tuple:
        return tuple(int(d) for d in self.voxels.shape)

    @property
    def datatype(self) -> int:
        try:
            return DTYPE_CODES[self.voxels.dtype.str[1:]]
        except KeyError:
            raise UnsupportedDatatype(f"no NIfTI code for dtype {self.voxels.dtype}") from None

    @property
    def affine(self) -> np.ndarray:
        aff = np.eye(4)
        aff[:3, :3] = self.direction * np.asarray(self.spacing)
        aff[:3, 3] = self.origin
        return aff

    @classmethod
    def from_affine(cls, voxels, affine, kind=LABEL) -> "Volume":
        affine = np.asarray(affine, dtype=float)
        cols = affine[:3, :3]
        spacing = np.linalg.norm(cols, axis=0)
        if np.any(spacing <= 0):
            raise MalformedHeader("affine has a zero-length axis")
        return cls(voxels, tuple(spacing), cols / spacing, tuple(affine[:3, 3]), kind)


# ---------------------------------------------------------------- reading

def _open_bytes(path: Path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_header(raw: bytes) -> tuple[dict, str]:
    if len(raw) < 348:
        raise MalformedHeader(f"file too short for a NIfTI-1 header ({len(raw)} bytes)")
    for endian in ("<", ">"):
        if struct.unpack(endian + "i", raw[:4])[0] == 348:
            break
    else:
        raise MalformedHeader("sizeof_hdr is not 348 in either byte order")
    values = struct.unpack(endian + _HEADER_FORMAT, raw[:348])
    hdr = dict(zip(_HEADER_FIELDS, values))
    magic = hdr["magic"]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise MalformedHeader(f"bad magic {magic!r}")
    return hdr, endian


def quaternion_to_matrix(b: float, c: float, d: float) -> np.ndarray:
    bcd = np.array([b, c, d], dtype=float)
    a2 = 1.0 - float(bcd @ bcd)
    if a2 < _QUAT_EPS:
        # float32 storage leaves a ~1e-7 residue for half turns; treat it as exactly zero
        a = 0.0
        b, c, d = bcd / np.linalg.norm(bcd)
    else:
        a = np.sqrt(a2)
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])


def matrix_to_quaternion(rot: np.ndarray) -> tuple[tuple, float]:
    """Rotation part of a direction matrix as (b, c, d) plus qfac for improper matrices."""
    r = np.array(rot, dtype=float)
    qfac = 1.0
    if np.linalg.det(r) < 0:
        qfac = -1.0
        r[:, 2] = -r[:, 2]
    # nearest orthonormal matrix
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    trace = r[0, 0] + r[1, 1] + r[2, 2]
    if trace > 0.5:
        a = 0.5 * np.sqrt(1.0 + trace)
        b = 0.25 * (r[2, 1] - r[1, 2]) / a
        c = 0.25 * (r[0, 2] - r[2, 0]) / a
        d = 0.25 * (r[1, 0] - r[0, 1]) / a
    else:
        xd = 1.0 + r[0, 0] - (r[1, 1] + r[2, 2])
        yd = 1.0 + r[1, 1] - (r[0, 0] + r[2, 2])
        zd = 1.0 + r[2, 2] - (r[0, 0] + r[1, 1])
        if xd > 1.0:
            b = 0.5 * np.sqrt(xd)
            c = 0.25 * (r[0, 1] + r[1, 0]) / b
            d = 0.25 * (r[0, 2] + r[2, 0]) / b
            a = 0.25 * (r[2, 1] - r[1, 2]) / b
        elif yd > 1.0:
            c = 0.5 * np.sqrt(yd)
            b = 0.25 * (r[0, 1] + r[1, 0]) / c
            d = 0.25 * (r[1, 2] + r[2, 1]) / c
            a = 0.25 * (r[0, 2] - r[2, 0]) / c
        else:
            d = 0.5 * np.sqrt(zd)
            b = 0.25 * (r[0, 2] + r[2, 0]) / d
            c = 0.25 * (r[1, 2] + r[2, 1]) / d
            a = 0.25 * (r[1, 0] - r[0, 1]) / d
    if a < 0:
        b, c, d = -b, -c, -d
    return (float(b), float(c), float(d)), qfac


def header_geometry(hdr: Mapping) -> tuple[tuple, np.ndarray, tuple]:
    """(spacing, direction, origin) using sform, then qform, then pixdim only."""
    pixdim = np.array([hdr[f"pixdim{i}"] for i in range(1, 4)], dtype=float)
    spacing = np.abs(pixdim)
    if hdr["sform_code"] > 0:
        srow = np.array([[hdr[f"srow_{a}{i}"] for i in range(4)] for a in "xyz"], dtype=float)
        cols = srow[:, :3]
        norms = np.linalg.norm(cols, axis=0)
        if np.all(norms > 0):
            if np.any(spacing <= 0):
                spacing = norms
            return tuple(spacing), cols / norms, tuple(srow[:, 3])
        logger.warning("sform has a zero column; falling back to qform")
    if np.any(spacing <= 0):
        raise MalformedHeader(f"non-positive pixdim {pixdim}")
    if hdr["qform_code"] > 0:
        rot = quaternion_to_matrix(hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"])
        qfac = -1.0 if hdr["pixdim0"] < 0 else 1.0
        rot[:, 2] *= qfac
        origin = (hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"])
        return tuple(spacing), rot, tuple(float(o) for o in origin)
    return tuple(spacing), np.eye(3), (0.0, 0.0, 0.0)


def load_volume(path, kind: str = LABEL) -> Volume:
    """Read a NIfTI-1 file (``.nii``, ``.nii.gz`` or ``.hdr``/``.img`` pair)."""
    path = Path(path)
    raw = _open_bytes(path)
    hdr, endian = read_header(raw)

    ndim = hdr["dim0"]
    if not 1 <= ndim <= 7:
        raise MalformedHeader(f"dim[0]={ndim} outside 1..7")
    dims = [hdr[f"dim{i}"] for i in range(1, ndim + 1)]
    if any(d < 1 for d in dims):
        raise MalformedHeader(f"non-positive dimension in {dims}")
    if any(d != 1 for d in dims[3:]):
        raise DimensionMismatch(f"only 3D volumes are supported, got dims {dims}")
    dims = (dims + [1, 1, 1])[:3]

    code = hdr["datatype"]
    allowed = LABEL_DATATYPES | _FLOAT_DATATYPES if kind == LABEL else INTENSITY_DATATYPES
    if code not in DATATYPES or code not in allowed:
        raise UnsupportedDatatype(f"datatype code {code} not supported for {kind} volumes")
    dtype = np.dtype(endian + DATATYPES[code])

    if hdr["magic"] == b"n+1\x00":
        offset = int(hdr["vox_offset"])
        payload = raw[offset:]
    else:
        img = path.with_suffix(".img") if path.suffix != ".gz" else Path(str(path)[:-7] + ".img.gz")
        if not img.exists():
            raise MalformedHeader(f"ni1 header without image file {img}")
        payload = _open_bytes(img)[int(hdr["vox_offset"]):]
    n = int(np.prod(dims))
    if len(payload) != n * dtype.itemsize:
        raise DimensionMismatch(
            f"data holds {len(payload)} bytes, dims {tuple(dims)} of {dtype} need {n * dtype.itemsize}")
    data = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    data = data.astype(dtype.newbyteorder("="))

    if kind == LABEL:
        if code in _FLOAT_DATATYPES:
            if not np.all(np.isfinite(data)) or np.any(data != np.round(data)):
                raise NotALabelMap(f"{path}: non-integer values in a label map")
            data = data.astype(np.int32)
        if data.size and data.min() < 0:
            raise NotALabelMap(f"{path}: negative values in a label map")
    else:
        slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
        if np.isfinite(slope) and slope != 0 and (slope != 1.0 or inter != 0.0):
            data = data.astype(np.float64) * slope + (inter if np.isfinite(inter) else 0.0)

    spacing, direction, origin = header_geometry(hdr)
    return Volume(data, spacing, direction, origin, kind)


# ---------------------------------------------------------------- writing

def encode_nifti(v: Volume, byteorder: str = "<") -> bytes:
    code = v.datatype
    allowed = LABEL_DATATYPES if v.kind == LABEL else INTENSITY_DATATYPES
    if code not in allowed:
        raise UnsupportedDatatype(f"datatype {v.voxels.dtype} not supported for {v.kind} volumes")
    dtype = np.dtype(byteorder + DATATYPES[code])
    quat, qfac = matrix_to_quaternion(v.direction)
    aff = v.affine
    hdr = dict.fromkeys(_HEADER_FIELDS, 0)
    hdr.update(
        sizeof_hdr=348, data_type=b"", db_name=b"", regular=b"r", descrip=b"bodyregion",
        aux_file=b"", intent_name=b"", magic=b"n+1\x00",
        dim0=3, dim1=v.dims[0], dim2=v.dims[1], dim3=v.dims[2], dim4=1, dim5=1, dim6=1, dim7=1,
        datatype=code, bitpix=dtype.itemsize * 8,
        pixdim0=qfac, pixdim1=v.spacing[0], pixdim2=v.spacing[1], pixdim3=v.spacing[2],
        vox_offset=352.0, scl_slope=1.0, scl_inter=0.0, xyzt_units=2,
        qform_code=1, sform_code=1,
        quatern_b=quat[0], quatern_c=quat[1], quatern_d=quat[2],
        qoffset_x=v.origin[0], qoffset_y=v.origin[1], qoffset_z=v.origin[2],
    )
    for a, row in zip("xyz", aff[:3]):
        for i in range(4):
            hdr[f"srow_{a}{i}"] = float(row[i])
    header = struct.pack(byteorder + _HEADER_FORMAT, *(hdr[k] for k in _HEADER_FIELDS))
    body = np.asarray(v.voxels, dtype=dtype).tobytes(order="F")
    return header + b"\x00" * 4 + body


def save_volume(v: Volume, path, byteorder: str = "<") -> Path:
    """Write ``v`` as single-file NIfTI-1; gzip when the name ends in ``.gz``."""
    path = Path(path)
    data = encode_nifti(v, byteorder)
    if path.suffix == ".gz":
        # no name or mtime in the gzip header keeps output byte-identical
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(data)
    else:
        path.write_bytes(data)
    return path


# ---------------------------------------------------------------- orientation

def axis_codes(direction: np.ndarray, threshold: float = OBLIQUE_THRESHOLD) -> tuple[tuple, tuple]:
    """Dominant world axis and its sign for each array axis."""
    direction = np.asarray(direction, dtype=float)
    world, signs = [], []
    for i in range(3):
        col = direction[:, i]
        norm = np.linalg.norm(col)
        col = col / norm if norm > 0 else col
        w = int(np.argmax(np.abs(col)))
        if not abs(col[w]) > threshold:
            raise ObliqueVolume(f"array axis {i} has no dominant world axis (max |cos| = {abs(col[w]):.3f})")
        world.append(w)
        signs.append(1 if col[w] > 0 else -1)
    if sorted(world) != [0, 1, 2]:
        raise ObliqueVolume(f"array axes map onto world axes {world}; not a permutation")
    return tuple(world), tuple(signs)


def canonicalize(v: Volume, threshold: float = OBLIQUE_THRESHOLD) -> Volume:
    """Permute/flip axes so array axes 0, 1, 2 point right, anterior, superior."""
    world, signs = axis_codes(v.direction, threshold)
    if world == (0, 1, 2) and signs == (1, 1, 1):
        return v
    perm = [world.index(j) for j in range(3)]  # new axis j takes old axis perm[j]
    return reorient(v, perm, [signs[i] < 0 for i in perm])


def reorient(v: Volume, perm, flips) -> Volume:
    """Same anatomy stored with array axes permuted by ``perm`` then flipped where ``flips``.

    The affine is updated so world coordinates of every voxel are unchanged.
    """
    aff = v.affine
    vox = np.transpose(v.voxels, perm)
    new_aff = np.eye(4)
    new_aff[:3, 3] = aff[:3, 3]
    for j, i in enumerate(perm):
        col = aff[:3, i]
        if flips[j]:
            vox = np.flip(vox, axis=j)
            new_aff[:3, 3] += col * (v.dims[i] - 1)
            col = -col
        new_aff[:3, j] = col
    return Volume.from_affine(np.ascontiguousarray(vox), new_aff, v.kind)


# ---------------------------------------------------------------- presence index

@dataclass(frozen=True)
class ClassPresence:
    min_slice: int
    max_slice: int
    voxel_count: int


@dataclass(frozen=True)
class SlicePresenceIndex:
    si_axis_len: int
    si_spacing_cm: float
    per_class: Mapping[int, ClassPresence]

    @property
    def first_nonempty_slice(self) -> int | None:
        return min((p.min_slice for p in self.per_class.values()), default=None)

    @property
    def last_nonempty_slice(self) -> int | None:
        return max((p.max_slice for p in self.per_class.values()), default=None)

    @property
    def is_empty(self) -> bool:
        return not self.per_class

    def filtered(self, min_voxels: int) -> "SlicePresenceIndex":
        """Index without classes below ``min_voxels`` voxels."""
        kept = {c: p for c, p in self.per_class.items() if p.voxel_count >= min_voxels}
        return SlicePresenceIndex(self.si_axis_len, self.si_spacing_cm, kept)

    def to_dict(self) -> dict:
        return {
            "si_axis_len": self.si_axis_len,
            "si_spacing_cm": self.si_spacing_cm,
            "first_nonempty_slice": self.first_nonempty_slice,
            "last_nonempty_slice": self.last_nonempty_slice,
            "per_class": {int(c): [p.min_slice, p.max_slice, p.voxel_count]
                          for c, p in sorted(self.per_class.items())},
        }


def build_presence_index(v: Volume) -> SlicePresenceIndex:
    """Per-class SI slice range and voxel count of a canonical label volume."""
    if v.kind != LABEL:
        raise NotALabelMap("presence index needs a label volume")
    nz = v.dims[2]
    labels = np.asarray(v.voxels)
    flat = np.moveaxis(labels, 2, 0).reshape(nz, -1)
    nonzero = flat != 0
    if not nonzero.any():
        raise EmptyVolume("label volume has no nonzero voxel")
    slice_idx = np.broadcast_to(np.arange(nz)[:, None], flat.shape)[nonzero]
    vals = flat[nonzero].astype(np.int64)
    n_labels = int(vals.max()) + 1
    counts = np.bincount(vals, minlength=n_labels)
    present = np.zeros((nz, n_labels), dtype=bool)
    present[slice_idx, vals] = True
    per_class = {}
    for c in np.flatnonzero(counts):
        column = present[:, c]
        lo = int(np.argmax(column))
        hi = int(nz - 1 - np.argmax(column[::-1]))
        per_class[int(c)] = ClassPresence(lo, hi, int(counts[c]))
    return SlicePresenceIndex(nz, v.spacing[2] / 10.0, per_class)


def merge_label_maps(base: Volume, overlay: Volume, offset: int = 100) -> Volume:
    """Combine two label maps of the same grid; nonzero overlay voxels win as ``offset + label``.

    Used for MR, where organs and vertebrae come from separate models.
    """
    if base.dims != overlay.dims or not np.allclose(base.affine, overlay.affine, atol=1e-3):
        raise DimensionMismatch("label maps must share grid and affine to be merged")
    out = np.asarray(base.voxels).astype(np.int32)
    ov = np.asarray(overlay.voxels)
    mask = ov != 0
    out[mask] = ov[mask].astype(np.int32) + offset
    return Volume(out, base.spacing, base.direction, base.origin, LABEL)
