"""Minimal dense-tensor core with reverse-mode differentiation."""
from . import ops
from .fourier import fourier_encode, fourier_pe, gaussian_matrix, grid_pe, pixel_coords
from .gradcheck import GradCheckReport, grad_check
from .params import ParamStore
from .rng import derive_seed, make_rng
from .tensor import Tensor, as_tensor

__all__ = [
    "ops", "Tensor", "as_tensor", "ParamStore", "grad_check", "GradCheckReport",
    "fourier_pe", "fourier_encode", "gaussian_matrix", "grid_pe", "pixel_coords",
    "make_rng", "derive_seed",
]
