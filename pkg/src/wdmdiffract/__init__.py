"""Wavelength-multiplexed diffractive processors for parallel linear transforms."""

from .field import bin_fov, devectorize, embed_fov, vectorize
from .materials import DISPERSION_FREE, Material, load_table
from .propagation import adjoint_propagate, direct_rs_reference, propagate
from .stack import (DiffractiveModel, StackGeometry, build_model, channel_ladder, forward,
                    load_checkpoint, quantize, save_checkpoint, thickness, transmission)
from .taskgen import Dataset, TransformSet, gen_dataset, gen_transforms
from .training import TrainConfig, TrainState, channel_loss, fit

__all__ = [
    "bin_fov", "devectorize", "embed_fov", "vectorize",
    "DISPERSION_FREE", "Material", "load_table",
    "adjoint_propagate", "direct_rs_reference", "propagate",
    "DiffractiveModel", "StackGeometry", "build_model", "channel_ladder", "forward",
    "load_checkpoint", "quantize", "save_checkpoint", "thickness", "transmission",
    "Dataset", "TransformSet", "gen_dataset", "gen_transforms",
    "TrainConfig", "TrainState", "channel_loss", "fit",
]
