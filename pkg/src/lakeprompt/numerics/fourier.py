"""Random Fourier-feature positional encoding."""
import numpy as np

from ..errors import ContractError
from .rng import make_rng


def gaussian_matrix(dim: int, seed: int, scale: float = 1.0) -> np.ndarray:
    """Fixed (2, dim/2) frequency matrix drawn from the seed."""
    if dim <= 0 or dim % 2:
        raise ContractError(f"positional encoding width must be even and positive, got {dim}")
    return scale * make_rng("fourier", seed).standard_normal((2, dim // 2))


def fourier_encode(coords, matrix: np.ndarray) -> np.ndarray:
    """Encode (N, 2) coordinates in [0, 1]^2 as (N, dim) = [sin, cos] features."""
    c = np.asarray(coords, dtype=matrix.dtype).reshape(-1, 2)
    proj = 2.0 * np.pi * ((2.0 * c - 1.0) @ matrix)
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=-1)


def fourier_pe(coords, dim: int, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    return fourier_encode(coords, gaussian_matrix(dim, seed, scale))


def pixel_coords(xy, width: int, height: int) -> np.ndarray:
    """Pixel (x, y) to normalized centre coordinates in [0, 1]^2."""
    p = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    return (p + 0.5) / np.array([width, height], dtype=np.float64)


def grid_pe(h: int, w: int, matrix: np.ndarray) -> np.ndarray:
    """(h*w, dim) encodings of a grid's cell centres, row-major."""
    ys, xs = np.mgrid[0:h, 0:w]
    coords = np.stack([(xs.ravel() + 0.5) / w, (ys.ravel() + 0.5) / h], axis=1)
    return fourier_encode(coords, matrix)
