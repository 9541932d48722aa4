"""Free-space scalar propagation between parallel planes.

The production path is a band-limited angular-spectrum transfer function on
a zero-padded grid.  ``direct_rs_reference`` evaluates the Rayleigh-Sommerfeld
secondary-wave sum literally and exists to validate it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .field import SAMPLE_PITCH


class PropagationError(ValueError):
    pass


@dataclass(frozen=True)
class PropagationPlan:
    distance: float
    wavelength: float
    grid_side: int
    pitch: float = SAMPLE_PITCH
    pad_factor: int = 2
    transfer: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.wavelength > 0:
            raise PropagationError(f"wavelength must be positive, got {self.wavelength}")
        if self.grid_side < 1 or self.pad_factor < 1:
            raise PropagationError("grid_side and pad_factor must be >= 1")
        object.__setattr__(self, "transfer", _transfer_function(
            self.distance, self.wavelength, self.padded_side, self.pitch))
        self.transfer.setflags(write=False)

    @property
    def padded_side(self) -> int:
        return self.pad_factor * self.grid_side

    def _apply(self, u: np.ndarray, transfer: np.ndarray) -> np.ndarray:
        g, p = self.grid_side, self.padded_side
        if p == g:
            return np.fft.ifft2(np.fft.fft2(u) * transfer)
        lo = (p - g) // 2
        padded = np.zeros(u.shape[:-2] + (p, p), dtype=np.complex128)
        padded[..., lo:lo + g, lo:lo + g] = u
        out = np.fft.ifft2(np.fft.fft2(padded) * transfer)
        return out[..., lo:lo + g, lo:lo + g]

    def forward(self, u: np.ndarray) -> np.ndarray:
        return self._apply(u, self.transfer)

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        return self._apply(u, self.transfer.conj())


def _transfer_function(d: float, wavelength: float, n: int, pitch: float) -> np.ndarray:
    f = np.fft.fftfreq(n, pitch)
    f2 = f[:, None] ** 2 + f[None, :] ** 2
    nyquist = 1.0 / (2.0 * pitch)
    cutoff2 = min(1.0 / wavelength**2, nyquist**2)
    keep = f2 <= cutoff2
    kz = np.sqrt(np.where(keep, 1.0 / wavelength**2 - f2, 0.0))
    return np.where(keep, np.exp(2j * np.pi * d * kz), 0.0)


@lru_cache(maxsize=512)
def make_plan(distance: float, wavelength: float, grid_side: int,
              pitch: float = SAMPLE_PITCH, pad_factor: int = 2) -> PropagationPlan:
    return PropagationPlan(float(distance), float(wavelength), int(grid_side),
                           float(pitch), int(pad_factor))


def _check(u: np.ndarray, wavelength: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim < 2 or u.shape[-1] != u.shape[-2]:
        raise PropagationError(f"expected square trailing axes, got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise PropagationError("input field contains non-finite samples")
    if not wavelength > 0:
        raise PropagationError(f"wavelength must be positive, got {wavelength}")
    return u


def propagate(u: np.ndarray, d: float, wavelength: float, *,
              pitch: float = SAMPLE_PITCH, pad_factor: int = 2) -> np.ndarray:
    """Propagate field(s) ``u`` (..., M, M) by distance ``d`` at ``wavelength``.

    Evanescent components and frequencies beyond the grid Nyquist limit are
    removed.  ``pad_factor=1`` gives the periodic (uncropped) operator.
    """
    u = _check(u, wavelength)
    return make_plan(d, wavelength, u.shape[-1], pitch, pad_factor).forward(u)


def adjoint_propagate(u: np.ndarray, d: float, wavelength: float, *,
                      pitch: float = SAMPLE_PITCH, pad_factor: int = 2) -> np.ndarray:
    """Exact adjoint of :func:`propagate` with the same arguments."""
    u = _check(u, wavelength)
    return make_plan(d, wavelength, u.shape[-1], pitch, pad_factor).adjoint(u)


def rs_kernel(dx, dy, d: float, wavelength: float, pitch: float = SAMPLE_PITCH):
    """Secondary-wave contribution of one source sample, area weight included."""
    r = np.sqrt(dx**2 + dy**2 + d**2)
    return (d / r**2) * (1.0 / (2 * np.pi * r) + 1.0 / (1j * wavelength)) \
        * np.exp(2j * np.pi * r / wavelength) * pitch**2


def direct_rs_reference(u: np.ndarray, d: float, wavelength: float, *,
                        pitch: float = SAMPLE_PITCH) -> np.ndarray:
    """O(M^2) Rayleigh-Sommerfeld summation onto the same grid at distance d."""
    if not d > 0:
        raise PropagationError(f"direct summation needs d > 0, got {d}")
    u = _check(u, wavelength)
    if u.ndim != 2:
        raise PropagationError("direct summation takes a single 2D field")
    m = u.shape[0]
    if m * m > 4096:
        raise PropagationError(f"grid of {m}x{m} is too large for direct summation")
    idx = np.arange(m) * pitch
    rel = idx[:, None] - idx[None, :]
    # kernel[i, j, k, l] couples source (k, l) to observation (i, j)
    kernel = rs_kernel(rel[:, None, :, None], rel[None, :, None, :], d, wavelength, pitch)
    return np.einsum("ijkl,kl->ij", kernel, u)
