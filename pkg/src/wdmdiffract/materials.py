"""Wavelength-dependent complex refractive index of the layer material."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    """Either a constant (n0, kappa0) or a table of (lambda / lambda_m, n, kappa)."""

    name: str
    n0: float = 1.0
    kappa0: float = 0.0
    table: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self):
        if self.table is None:
            if not self.n0 > 0 or self.kappa0 < 0:
                raise MaterialError(f"invalid constant index n={self.n0}, kappa={self.kappa0}")
            return
        if len(self.table) < 1:
            raise MaterialError("dispersion table is empty")
        lam = [row[0] for row in self.table]
        if any(b <= a for a, b in zip(lam, lam[1:])):
            raise MaterialError("dispersion table wavelengths must be strictly increasing")
        for lam_i, n, kappa in self.table:
            if not n > 0 or kappa < 0:
                raise MaterialError(f"invalid table entry at lambda={lam_i}: n={n}, kappa={kappa}")

    @property
    def kind(self) -> str:
        return "constant" if self.table is None else "tabulated"

    @property
    def lossless(self) -> bool:
        if self.table is None:
            return self.kappa0 == 0
        return all(row[2] == 0 for row in self.table)

    def complex_index(self, wavelength: float) -> tuple[float, float]:
        """Return (n, kappa) at ``wavelength`` (in units of lambda_m)."""
        if self.table is None:
            if not wavelength > 0:
                raise MaterialError(f"wavelength must be positive, got {wavelength}")
            return self.n0, self.kappa0
        lam, n, kappa = (np.array(col) for col in zip(*self.table))
        if wavelength < lam[0] or wavelength > lam[-1]:
            raise MaterialError(
                f"wavelength {wavelength} outside table span [{lam[0]}, {lam[-1]}]")
        return float(np.interp(wavelength, lam, n)), float(np.interp(wavelength, lam, kappa))


def complex_index(m: Material, wavelength: float) -> tuple[float, float]:
    return m.complex_index(wavelength)


DISPERSION_FREE = Material("dispersion-free", n0=1.72, kappa0=0.0)

BUILTIN = {DISPERSION_FREE.name: DISPERSION_FREE}


def load_table(path, name: str | None = None) -> Material:
    """Read a whitespace-separated ``lambda/lambda_m n kappa`` table."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise MaterialError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        rows.append(tuple(float(p) for p in parts))
    return Material(name or str(path), table=tuple(rows))


def resolve(ref: str, base_dir=None) -> Material:
    """Look up a built-in material name or load a table path."""
    if ref in BUILTIN:
        return BUILTIN[ref]
    path = Path(ref)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    if not path.exists():
        raise MaterialError(f"unknown material {ref!r} (not built in, no such file)")
    return load_table(path, name=ref)
