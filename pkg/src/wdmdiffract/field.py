"""Complex field containers and FOV <-> simulation-grid resampling.

Fields on the simulation grid are plain complex ndarrays with the two
trailing axes as (row, column); the sample pitch is lambda_m / 2 and all
lengths are expressed in units of lambda_m.  FOV fields are vectors in
column-major order with pixel pitch 2 * lambda_m, i.e. one FOV pixel spans a
4x4 block of simulation samples.
"""

from __future__ import annotations

import math

import numpy as np

SAMPLE_PITCH = 0.5
BLOCK = 4


class SizingError(ValueError):
    """Raised when a FOV does not fit on a simulation grid."""


def vectorize(pixels: np.ndarray) -> np.ndarray:
    """Flatten the trailing square 2D axes in column-major order."""
    pixels = np.asarray(pixels)
    if pixels.ndim < 2 or pixels.shape[-1] != pixels.shape[-2]:
        raise SizingError(f"expected square trailing axes, got {pixels.shape}")
    side = pixels.shape[-1]
    return np.swapaxes(pixels, -1, -2).reshape(*pixels.shape[:-2], side * side)


def devectorize(values: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    values = np.asarray(values)
    side = fov_side(values.shape[-1])
    return np.swapaxes(values.reshape(*values.shape[:-1], side, side), -1, -2)


def fov_side(n: int) -> int:
    side = math.isqrt(n)
    if side * side != n:
        raise SizingError(f"FOV length {n} is not a perfect square")
    return side


def fov_offset(grid_side: int, side: int) -> int:
    """Top/left offset of a centered FOV block; odd slack goes bottom/right."""
    extent = BLOCK * side
    if grid_side < extent:
        raise SizingError(
            f"grid of {grid_side} samples cannot hold a {side}x{side} FOV "
            f"({extent} samples)"
        )
    return (grid_side - extent) // 2


def embed_fov(values: np.ndarray, grid_side: int) -> np.ndarray:
    """Render FOV vectors (..., N) onto a zero (..., grid_side, grid_side) grid.

    Each pixel value is replicated over its 4x4 sample block.
    """
    pixels = devectorize(values)
    side = pixels.shape[-1]
    off = fov_offset(grid_side, side)
    block = np.repeat(np.repeat(pixels, BLOCK, axis=-2), BLOCK, axis=-1)
    grid = np.zeros(pixels.shape[:-2] + (grid_side, grid_side), dtype=np.complex128)
    ext = BLOCK * side
    grid[..., off:off + ext, off:off + ext] = block
    return grid


def bin_fov(grid: np.ndarray, side: int) -> np.ndarray:
    """Complex mean over the 4x4 blocks of the centered FOV, vectorized."""
    grid = np.asarray(grid)
    if grid.shape[-1] != grid.shape[-2]:
        raise SizingError(f"expected a square grid, got {grid.shape}")
    off = fov_offset(grid.shape[-1], side)
    ext = BLOCK * side
    region = grid[..., off:off + ext, off:off + ext]
    blocks = region.reshape(*region.shape[:-2], side, BLOCK, side, BLOCK)
    return vectorize(blocks.mean(axis=(-3, -1)))


def bin_fov_adjoint(values: np.ndarray, grid_side: int) -> np.ndarray:
    """Adjoint of :func:`bin_fov` under the sum(conj(a) * b) inner product."""
    return embed_fov(values, grid_side) / (BLOCK * BLOCK)


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    return complex(np.vdot(a, b))
