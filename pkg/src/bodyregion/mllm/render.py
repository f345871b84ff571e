"""Composite axial | sagittal | coronal image of an intensity volume."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DegenerateAxis
from ..volume_io import Volume

CT_WINDOW = (40.0, 400.0)  # soft tissue, HU
PANELS = ("axial", "sagittal", "coronal")


@dataclass(frozen=True, eq=False)
class CompositeImage:
    pixels: np.ndarray  # (height, width) uint8
    panel_boundaries: tuple  # x offset where each panel starts

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def channels(self) -> int:
        return 1

    def panel(self, name: str) -> np.ndarray:
        i = PANELS.index(name)
        stop = self.panel_boundaries[i + 1] if i < 2 else self.width
        return self.pixels[:, self.panel_boundaries[i]:stop]

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_png_bytes())
        return path


def slice_indices(dims) -> tuple[int, int, int]:
    return tuple(int(d) // 2 for d in dims)


def extract_views(v: Volume, projection: str = "mid") -> dict[str, tuple[np.ndarray, tuple[float, float]]]:
    """Raw 2D views of a canonical volume, displayed with superior/anterior up.

    Returns panel name -> (image, (physical width mm, physical height mm)).
    """
    if min(v.dims) < 2:
        raise DegenerateAxis(f"every axis needs at least 2 voxels, got {v.dims}")
    vox = np.asarray(v.voxels, dtype=np.float64)
    sx, sy, sz = v.spacing
    nx, ny, nz = v.dims
    i, j, k = slice_indices(v.dims)
    if projection == "mid":
        ax, sag, cor = vox[:, :, k], vox[i, :, :], vox[:, j, :]
    elif projection == "mip":
        ax, sag, cor = vox.max(axis=2), vox.max(axis=0), vox.max(axis=1)
    elif projection == "mean":
        ax, sag, cor = vox.mean(axis=2), vox.mean(axis=0), vox.mean(axis=1)
    else:
        raise ValueError(f"unknown projection {projection!r}")
    return {
        "axial": (ax.T[::-1, :], (nx * sx, ny * sy)),
        "sagittal": (sag.T[::-1, :], (ny * sy, nz * sz)),
        "coronal": (cor.T[::-1, :], (nx * sx, nz * sz)),
    }


def window_panel(img: np.ndarray, window) -> np.ndarray:
    """Map intensities to 0..255: fixed (center, width) window, or 1st-99th percentile when None."""
    if window is None:
        lo, hi = np.percentile(img, [1.0, 99.0])
    else:
        center, width = window
        lo, hi = center - width / 2.0, center + width / 2.0
    if hi <= lo:
        return np.full(img.shape, 128, dtype=np.uint8)
    scaled = (np.clip(img, lo, hi) - lo) / (hi - lo) * 255.0
    return np.round(scaled).astype(np.uint8)


def render_views(v: Volume, modality: str = "CT", window="default", height: int = 256,
                 projection: str = "mid") -> CompositeImage:
    """Three orthogonal views, each normalized on its own, scaled to a common height.

    ``window`` is a (center, width) pair, ``"auto"`` for percentile
    normalization, or ``"default"`` (CT soft-tissue window, auto for MR).
    """
    if isinstance(window, str):
        if window == "default":
            window = CT_WINDOW if modality.upper() == "CT" else None
        elif window == "auto":
            window = None
        else:
            raise ValueError(f"unknown window {window!r}")
    views = extract_views(v, projection)
    panels, bounds, x = [], [], 0
    for name in PANELS:
        img, (pw, ph) = views[name]
        gray = window_panel(img, window)
        width = max(1, int(round(height * pw / ph)))
        resized = np.asarray(Image.fromarray(gray, mode="L").resize((width, height), Image.BILINEAR))
        panels.append(resized)
        bounds.append(x)
        x += width
    return CompositeImage(np.ascontiguousarray(np.hstack(panels)), tuple(bounds))
