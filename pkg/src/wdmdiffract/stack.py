"""The diffractive layer stack: geometry, thickness model and forward pass.

All lengths are in units of the mean wavelength lambda_m.  A layer of
``layer_side`` neurons (pitch 1/2) sits centered on a square simulation grid
that is at least as large as the input/output FOV; samples of the grid that
fall outside the layer aperture see free space (t = 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import field as fld
from .materials import DISPERSION_FREE, Material
from .propagation import make_plan

H_BASE = 0.25
H_MAX = 1.25
CONTINUOUS = None


class ConfigurationError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


def channel_ladder(n_channels: int) -> tuple[float, ...]:
    """Equally spaced wavelengths from 0.9125 to 1.0875 (single channel: 1)."""
    if n_channels < 1:
        raise ConfigurationError("need at least one wavelength channel")
    if n_channels == 1:
        return (1.0,)
    return tuple(float(x) for x in np.linspace(0.9125, 1.0875, n_channels))


def _even_at_least(n: int) -> int:
    return n + (n % 2)


@dataclass(frozen=True)
class StackGeometry:
    layers: int
    layer_side: int
    fov_side: int
    channels: tuple[float, ...]
    grid_side: int = 0
    distance: float = 0.0

    def __post_init__(self):
        if self.layers < 1 or self.layer_side < 1 or self.fov_side < 1:
            raise ConfigurationError(
                f"layers, layer_side and fov_side must be >= 1 "
                f"(got {self.layers}, {self.layer_side}, {self.fov_side})")
        object.__setattr__(self, "channels", tuple(float(c) for c in self.channels))
        if not self.channels or min(self.channels) <= 0:
            raise ConfigurationError("channel wavelengths must be positive")
        if not self.grid_side:
            object.__setattr__(self, "grid_side", _even_at_least(
                max(self.layer_side, fld.BLOCK * self.fov_side)))
        if self.grid_side < self.layer_side:
            raise ConfigurationError(
                f"grid of {self.grid_side} samples is smaller than the "
                f"{self.layer_side}-neuron layer")
        if self.grid_side < fld.BLOCK * self.fov_side:
            raise ConfigurationError(
                f"grid of {self.grid_side} samples cannot hold a "
                f"{self.fov_side}x{self.fov_side} FOV")
        if not self.distance:
            object.__setattr__(self, "distance", 0.5 * self.layer_width)

    @property
    def layer_width(self) -> float:
        return self.layer_side * fld.SAMPLE_PITCH

    @property
    def neurons(self) -> int:
        return self.layers * self.layer_side**2

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def fov_pixels(self) -> int:
        return self.fov_side**2

    @property
    def layer_slice(self) -> slice:
        lo = (self.grid_side - self.layer_side) // 2
        return slice(lo, lo + self.layer_side)

    @classmethod
    def for_neuron_budget(cls, neurons: int, layers: int, fov_side: int,
                          channels, **kw) -> "StackGeometry":
        """Square layers whose total neuron count is closest to ``neurons``."""
        side = max(1, round(math.sqrt(neurons / layers)))
        return cls(layers, side, fov_side, tuple(channels), **kw)


def thickness(h_v, h_max: float = H_MAX):
    """Bounded learnable thickness in [0, h_max] from a latent variable."""
    return 0.5 * h_max * (np.sin(h_v) + 1.0)


def quantize(h_learnable, q: int, h_max: float = H_MAX):
    """Round to the nearest of 2**q equally spaced levels on [0, h_max].

    Ties go to the higher level.
    """
    if not 1 <= int(q) <= 32:
        raise ConfigurationError(f"bit depth must be in 1..32, got {q}")
    top = float(2**int(q) - 1)
    step = h_max / top
    k = np.clip(np.floor(np.asarray(h_learnable) / step + 0.5), 0.0, top)
    return k * step


def _gamma(wavelength: float, material: Material) -> complex:
    n, kappa = material.complex_index(wavelength)
    return 2.0 * np.pi / wavelength * complex(-kappa, n - 1.0)


def transmission(h, wavelength: float, material: Material):
    """Complex transmission exp(-2 pi kappa h / lam) * exp(j (n - 1) 2 pi h / lam)."""
    return np.exp(_gamma(wavelength, material) * np.asarray(h))


@dataclass
class DiffractiveModel:
    geometry: StackGeometry
    latents: np.ndarray
    material: Material = DISPERSION_FREE
    h_base: float = H_BASE
    h_max: float = H_MAX
    bit_depth: int | None = CONTINUOUS
    seed: int | None = None

    def __post_init__(self):
        g = self.geometry
        self.latents = np.asarray(self.latents, dtype=np.float64)
        shape = (g.layers, g.layer_side, g.layer_side)
        if self.latents.shape != shape:
            raise ConfigurationError(f"latents have shape {self.latents.shape}, expected {shape}")
        if self.bit_depth is not None and not 1 <= self.bit_depth <= 32:
            raise ConfigurationError(f"bit depth must be in 1..32, got {self.bit_depth}")

    def learnable_thickness(self) -> np.ndarray:
        h = thickness(self.latents, self.h_max)
        if self.bit_depth is not None:
            h = quantize(h, self.bit_depth, self.h_max)
        return h

    def heights(self) -> np.ndarray:
        return self.learnable_thickness() + self.h_base

    def copy(self, **changes) -> "DiffractiveModel":
        return replace(self, latents=self.latents.copy(), **changes)

    def layer_transmissions(self, wavelengths) -> np.ndarray:
        """Transmission of every grid sample, shape (C, K, G, G)."""
        g = self.geometry
        h = self.heights()
        out = np.ones((len(wavelengths), g.layers, g.grid_side, g.grid_side),
                      dtype=np.complex128)
        s = g.layer_slice
        for c, lam in enumerate(wavelengths):
            out[c, :, s, s] = transmission(h, lam, self.material)
        return out


def build_model(geometry: StackGeometry, seed: int, material: Material = DISPERSION_FREE,
                bit_depth: int | None = CONTINUOUS, **kw) -> DiffractiveModel:
    """Latents drawn from a standard normal with a seeded PCG64 stream."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(7,))))
    shape = (geometry.layers, geometry.layer_side, geometry.layer_side)
    return DiffractiveModel(geometry, rng.standard_normal(shape), material,
                            bit_depth=bit_depth, seed=seed, **kw)


class _Operator:
    """Padded angular-spectrum propagation for a stack of channels."""

    def __init__(self, distance: float, wavelengths, grid_side: int):
        plans = [make_plan(distance, lam, grid_side) for lam in wavelengths]
        self.g = grid_side
        self.p = plans[0].padded_side
        self.lo = (self.p - self.g) // 2
        self.transfer = np.stack([pl.transfer for pl in plans])[:, None]
        self.transfer_conj = self.transfer.conj()

    def _apply(self, u, transfer):
        g, lo = self.g, self.lo
        padded = np.zeros(u.shape[:-2] + (self.p, self.p), dtype=np.complex128)
        padded[..., lo:lo + g, lo:lo + g] = u
        out = np.fft.ifft2(np.fft.fft2(padded) * transfer)
        return out[..., lo:lo + g, lo:lo + g]

    def forward(self, u):
        return self._apply(u, self.transfer)

    def adjoint(self, u):
        return self._apply(u, self.transfer_conj)


@dataclass
class Tape:
    """Intermediates retained by :func:`simulate` for the backward pass."""

    wavelengths: tuple[float, ...]
    transmissions: np.ndarray
    incident: list = field(default_factory=list)
    op: _Operator | None = None


def simulate(model: DiffractiveModel, inputs: np.ndarray, wavelengths, *,
             keep_tape: bool = False):
    """Run FOV inputs of shape (C, B, N_i) through the stack.

    Channel c uses ``wavelengths[c]``.  Returns outputs (C, B, N_o) and, when
    ``keep_tape`` is set, the tape for :func:`backward`.
    """
    g = model.geometry
    wavelengths = tuple(float(w) for w in wavelengths)
    inputs = np.asarray(inputs, dtype=np.complex128)
    if inputs.ndim != 3 or inputs.shape[0] != len(wavelengths):
        raise ConfigurationError(
            f"inputs must have shape (channels={len(wavelengths)}, batch, N), got {inputs.shape}")
    op = _Operator(g.distance, wavelengths, g.grid_side)
    t = model.layer_transmissions(wavelengths)
    tape = Tape(wavelengths, t, op=op)
    u = op.forward(fld.embed_fov(inputs, g.grid_side))
    for k in range(g.layers):
        if keep_tape:
            tape.incident.append(u)
        u = op.forward(u * t[:, k, None])
    out = fld.bin_fov(u, g.fov_side)
    return (out, tape) if keep_tape else out


def backward(model: DiffractiveModel, tape: Tape, grad_out: np.ndarray) -> np.ndarray:
    """Gradient with respect to the latents.

    ``grad_out`` holds dL/d conj(o') with the shape of the simulated outputs.
    Quantization, when enabled, is passed straight through.
    """
    g = model.geometry
    s = g.layer_slice
    gammas = np.array([_gamma(lam, model.material) for lam in tape.wavelengths])
    grad = tape.op.adjoint(fld.bin_fov_adjoint(grad_out, g.grid_side))
    dh = np.zeros((g.layers, g.layer_side, g.layer_side))
    for k in reversed(range(g.layers)):
        t = tape.transmissions[:, k, None]
        v = tape.incident[k]
        g_t = np.sum(grad * v.conj(), axis=1)[:, s, s]
        for c in range(len(tape.wavelengths)):
            contrib = 2.0 * np.real(g_t[c].conj() * gammas[c] * tape.transmissions[c, k, s, s])
            if not np.all(np.isfinite(contrib)):
                raise NumericalError(
                    f"non-finite gradient at layer {k + 1}, channel {c + 1} "
                    f"(wavelength {tape.wavelengths[c]})")
            dh[k] += contrib
        grad = tape.op.adjoint(grad * t.conj())
    return dh * 0.5 * model.h_max * np.cos(model.latents)


def forward(model: DiffractiveModel, inputs, channel: int, wavelength: float | None = None):
    """Output FOV field(s) for channel ``channel`` (0-based).

    ``inputs`` is a single FOV vector or a batch (B, N_i).  ``wavelength``
    overrides the channel's illumination wavelength.
    """
    chans = model.geometry.channels
    if not 0 <= channel < len(chans):
        raise ConfigurationError(f"channel {channel} out of range for {len(chans)} channels")
    lam = chans[channel] if wavelength is None else float(wavelength)
    if not lam > 0:
        raise ConfigurationError(f"illumination wavelength must be positive, got {lam}")
    x = np.asarray(inputs, dtype=np.complex128)
    single = x.ndim == 1
    out = simulate(model, x.reshape(1, -1, x.shape[-1]), (lam,))[0]
    return out[0] if single else out


# -- checkpoints -------------------------------------------------------------

MAGIC = b"WDMD-CHECKPOINT 1\n"


def _material_record(m: Material) -> dict:
    rec = {"name": m.name, "n0": m.n0, "kappa0": m.kappa0}
    if m.table is not None:
        rec["table"] = [list(r) for r in m.table]
    return rec


def _material_from_record(rec: dict) -> Material:
    table = rec.get("table")
    return Material(rec["name"], rec["n0"], rec["kappa0"],
                    None if table is None else tuple(tuple(r) for r in table))


def save_checkpoint(path, model: DiffractiveModel, *, epoch: int = 0,
                    extra: dict | None = None, arrays: dict | None = None) -> None:
    """Write a text header followed by little-endian float64 arrays.

    The latents always come first; ``arrays`` adds named float64 arrays
    (optimizer moments, spectral weights) after them.
    """
    arrays = {"latents": model.latents, **(arrays or {})}
    header = {
        "format_version": 1,
        "geometry": asdict(model.geometry),
        "material": _material_record(model.material),
        "h_base": model.h_base,
        "h_max": model.h_max,
        "bit_depth": model.bit_depth,
        "seed": model.seed,
        "epoch": epoch,
        "arrays": [[name, list(np.shape(a))] for name, a in arrays.items()],
        "extra": extra or {},
    }
    text = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(b"%d\n" % len(text))
        fh.write(text)
        fh.write(b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes(order="C"))


def load_checkpoint(path):
    """Return (model, header, arrays) from :func:`save_checkpoint` output."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ConfigurationError(f"{path} is not a checkpoint file")
    pos = len(MAGIC)
    nl = data.index(b"\n", pos)
    size = int(data[pos:nl])
    header = json.loads(data[nl + 1:nl + 1 + size])
    pos = nl + 2 + size
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
        arrays[name] = arr.reshape(shape).astype(np.float64)
        pos += 8 * count
    geom = header["geometry"]
    geom["channels"] = tuple(geom["channels"])
    model = DiffractiveModel(
        StackGeometry(**geom), arrays.pop("latents"),
        _material_from_record(header["material"]), header["h_base"], header["h_max"],
        header["bit_depth"], header["seed"])
    return model, header, arrays
