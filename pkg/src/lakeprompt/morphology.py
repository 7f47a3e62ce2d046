"""Binary morphology, outer-contour tracing and hole filling.

Out-of-bounds pixels are neutral for both operators: dilation never sees
foreground outside the image and erosion never fails because of it. With this
convention ``erode(m) == ~dilate(~m)`` holds exactly for symmetric elements and
closing is extensive and idempotent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError
from .raster_io import as_mask


@dataclass(frozen=True, eq=False)
class StructuringElement:
    data: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.data, dtype=np.uint8))
        if d.ndim != 2 or d.shape[0] % 2 == 0 or d.shape[1] % 2 == 0:
            raise ContractError(f"structuring element needs odd dimensions, got {d.shape}")
        if not np.isin(d, (0, 1)).all() or not d.any():
            raise ContractError("structuring element must be 0/1 with at least one 1")
        object.__setattr__(self, "data", d)

    @classmethod
    def square(cls, size: int) -> "StructuringElement":
        return cls(np.ones((size, size), dtype=np.uint8))

    @property
    def anchor(self) -> tuple[int, int]:
        h, w = self.data.shape
        return (w - 1) // 2, (h - 1) // 2

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]


DEFAULT_SE = StructuringElement.square(5)


def _prep(mask):
    return np.ascontiguousarray(as_mask(mask))


def dilate(mask, se: StructuringElement = DEFAULT_SE, iterations: int = 1) -> np.ndarray:
    """Pixel p is set iff the element anchored at p covers a foreground pixel."""
    if iterations < 1:
        raise ContractError("iterations must be >= 1")
    out = _prep(mask)
    for _ in range(iterations):
        out = kernels.dilate_once(out, se.data)
    return out


def erode(mask, se: StructuringElement = DEFAULT_SE, iterations: int = 1) -> np.ndarray:
    """Pixel p survives iff every in-bounds pixel under the element is foreground."""
    if iterations < 1:
        raise ContractError("iterations must be >= 1")
    out = _prep(mask)
    for _ in range(iterations):
        out = kernels.erode_once(out, se.data)
    return out


def close(mask, se: StructuringElement = DEFAULT_SE) -> np.ndarray:
    return erode(dilate(mask, se), se)


@dataclass
class Contour:
    points: list  # (x, y), consecutive entries 8-adjacent
    closed: bool


def components8(mask) -> np.ndarray:
    """8-connected component labels (-1 background), numbered in row-major order."""
    m = _prep(mask)
    if m.size == 0:
        return np.full(m.shape, -1, dtype=np.int64)
    return kernels.canonical_labels(kernels.dbscan_grid(m, kernels.disc_offsets(1.5), 1))


def trace_contours(mask) -> list[Contour]:
    """Outer boundary of every 8-connected component (Moore neighbour tracing)."""
    labels = np.ascontiguousarray(components8(mask))
    if labels.size == 0 or labels.max() < 0:
        return []
    flat = labels.ravel()
    n_lab = int(flat.max()) + 1
    firsts = np.full(n_lab, -1, dtype=np.int64)
    sizes = np.bincount(flat[flat >= 0], minlength=n_lab)
    fg_idx = np.flatnonzero(flat >= 0)
    # first occurrence per label, scanning backwards so earlier indices win
    firsts[flat[fg_idx[::-1]]] = fg_idx[::-1]
    w = labels.shape[1]
    contours = []
    for lab in range(n_lab):
        sy, sx = divmod(int(firsts[lab]), w)
        buf = np.empty((4 * int(sizes[lab]) + 8, 2), dtype=np.int64)
        n = kernels.moore_trace(labels, lab, sy, sx, kernels.DIR_DX, kernels.DIR_DY, buf)
        pts = [(int(x), int(y)) for x, y in buf[:n]]
        contours.append(Contour(points=pts, closed=len(pts) > 1))
    return contours


def fill_holes(mask) -> np.ndarray:
    """Set every background pixel not 4-reachable from the image border."""
    m = _prep(mask)
    if m.size == 0:
        return m.copy()
    reach = kernels.border_reach(np.ascontiguousarray((m == 0).astype(np.uint8)))
    return ((m != 0) | (reach == 0)).astype(np.uint8)


def fill_contours(contours, width: int, height: int) -> np.ndarray:
    """Rasterize contours and fill everything they enclose."""
    canvas = np.zeros((height, width), dtype=np.uint8)
    for c in contours:
        for x, y in c.points:
            if not (0 <= x < width and 0 <= y < height):
                raise ContractError(f"contour point {(x, y)} outside {width}x{height}")
            canvas[y, x] = 1
    return fill_holes(canvas)
