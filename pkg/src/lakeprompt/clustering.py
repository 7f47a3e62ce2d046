"""DBSCAN over foreground pixels, centroids and bounding extremes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError
from .raster_io import as_mask


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 1.5
    min_pts: int = 4

    def __post_init__(self):
        if not self.eps > 0:
            raise ContractError(f"eps must be > 0, got {self.eps}")
        if self.min_pts < 1:
            raise ContractError(f"min_pts must be >= 1, got {self.min_pts}")


@dataclass
class PixelCluster:
    label: int
    pixels: list  # (x, y) tuples in row-major order

    def __len__(self):
        return len(self.pixels)


def dbscan_labels(mask, params: DbscanParams = DbscanParams()) -> np.ndarray:
    """Per-pixel cluster labels; -1 marks background and noise.

    Labels are numbered by each cluster's first pixel in row-major order.
    """
    m = np.ascontiguousarray(as_mask(mask))
    if m.size == 0:
        return np.full(m.shape, -1, dtype=np.int64)
    offsets = kernels.disc_offsets(params.eps)
    return kernels.canonical_labels(kernels.dbscan_grid(m, offsets, params.min_pts))


def clusters_from_labels(labels) -> list[PixelCluster]:
    ys, xs = np.nonzero(labels >= 0)  # row-major order
    if ys.size == 0:
        return []
    lab = labels[ys, xs]
    order = np.argsort(lab, kind="stable")
    splits = np.flatnonzero(np.diff(lab[order])) + 1
    out = []
    for idx in np.split(order, splits):
        out.append(PixelCluster(label=int(lab[idx[0]]),
                                pixels=[(int(x), int(y)) for x, y in zip(xs[idx], ys[idx])]))
    return out


def dbscan(mask, params: DbscanParams = DbscanParams()) -> list[PixelCluster]:
    """Cluster foreground pixels with Euclidean DBSCAN; noise pixels are dropped."""
    return clusters_from_labels(dbscan_labels(mask, params))


def centroid(cluster) -> tuple[float, float]:
    pixels = cluster.pixels if isinstance(cluster, PixelCluster) else cluster
    if len(pixels) == 0:
        raise ContractError("centroid of an empty cluster")
    pts = np.asarray(pixels, dtype=np.float64)
    cx, cy = pts.mean(axis=0)
    return float(cx), float(cy)


def bounding_extremes(pixels) -> tuple[int, int, int, int]:
    """``(x_min, y_min, x_max, y_max)`` of a non-empty pixel list."""
    if len(pixels) == 0:
        raise ContractError("bounding_extremes of an empty pixel list")
    pts = np.asarray(pixels, dtype=np.int64)
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return int(x0), int(y0), int(x1), int(y1)
