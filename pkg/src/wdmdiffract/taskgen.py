"""Random complex target transforms and their input/output field datasets.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence(master_seed, spawn_key=...)``:

* transform ``w``: spawn key (1, w) yields a 64-bit per-matrix seed, which
  seeds the stream that draws amplitudes, then phases, in C order;
* inputs of channel ``w``, split ``s``: spawn key (2, w, s) draws amplitudes
  then phases for all samples of that split.

Any channel or split can be regenerated on its own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")
_TRANSFORM_STREAM = 1
_INPUT_STREAM = 2


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _uniform_complex(rng: np.random.Generator, shape) -> np.ndarray:
    amp = rng.random(shape)
    phase = rng.random(shape) * (2.0 * np.pi)
    return amp * np.exp(1j * phase)


def matrix_seed(master_seed: int, w: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(_TRANSFORM_STREAM, w))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TransformSet:
    matrices: tuple[np.ndarray, ...]
    seeds: tuple[int, ...]
    master_seed: int

    @property
    def n_channels(self) -> int:
        return len(self.matrices)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrices[0].shape


def gen_transform(n_in: int, n_out: int, seed: int) -> np.ndarray:
    """One N_o x N_i matrix with U[0,1) amplitudes and U[0,2pi) phases."""
    return _uniform_complex(_rng(seed), (n_out, n_in))


def gen_transforms(n_channels: int, n_in: int, n_out: int, master_seed: int) -> TransformSet:
    if n_channels < 1 or n_in < 1 or n_out < 1:
        raise ValueError("channel count and matrix dimensions must be >= 1")
    seeds = tuple(matrix_seed(master_seed, w) for w in range(n_channels))
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("per-matrix seed collision")
    mats = tuple(gen_transform(n_in, n_out, s) for s in seeds)
    return TransformSet(mats, seeds, master_seed)


def gen_inputs(n_in: int, count: int, master_seed: int, w: int, split: str) -> np.ndarray:
    ss = np.random.SeedSequence(master_seed, spawn_key=(_INPUT_STREAM, w, SPLITS.index(split)))
    return _uniform_complex(_rng(ss), (count, n_in))


@dataclass
class Dataset:
    """Input/output pairs per channel, generated lazily from seeds."""

    transforms: TransformSet
    counts: tuple[int, int, int]
    master_seed: int
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.counts = tuple(int(c) for c in self.counts)
        if len(self.counts) != 3 or min(self.counts) < 1:
            raise ValueError(f"split sizes must be three positive counts, got {self.counts}")

    @property
    def sizes(self) -> dict:
        return dict(zip(SPLITS, self.counts))

    def pairs(self, w: int, split: str) -> tuple[np.ndarray, np.ndarray]:
        """(inputs, outputs) of channel ``w`` with shapes (count, N_i), (count, N_o)."""
        key = (w, split)
        if key not in self._cache:
            a = self.transforms.matrices[w]
            x = gen_inputs(a.shape[1], self.sizes[split], self.master_seed, w, split)
            self._cache[key] = (x, x @ a.T)
        return self._cache[key]

    def stacked(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """All channels of a split, shapes (C, count, N)."""
        pairs = [self.pairs(w, split) for w in range(self.transforms.n_channels)]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def gen_dataset(transforms: TransformSet, counts, master_seed: int) -> Dataset:
    return Dataset(transforms, tuple(counts), master_seed)


# -- binary files ----------------------------------------------------------

MAGIC = b"WDMD-COMPLEX 1\n"


def write_complex(path, header: dict, *arrays: np.ndarray) -> None:
    """Text header, then each array as interleaved little-endian float64 pairs."""
    header = dict(header, arrays=[list(a.shape) for a in arrays])
    text = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"%d\n" % len(text) + text + b"\n")
        for a in arrays:
            pairs = np.stack([a.real, a.imag], axis=-1)
            fh.write(np.ascontiguousarray(pairs, dtype="<f8").tobytes())


def read_complex(path) -> tuple[dict, list[np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path} is not a complex-array file")
    pos = len(MAGIC)
    nl = data.index(b"\n", pos)
    size = int(data[pos:nl])
    header = json.loads(data[nl + 1:nl + 1 + size])
    pos = nl + 2 + size
    arrays = []
    for shape in header["arrays"]:
        count = int(np.prod(shape)) * 2
        flat = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
        arrays.append((flat[0::2] + 1j * flat[1::2]).reshape(shape))
        pos += 8 * count
    return header, arrays


def write_transforms(directory, ts: TransformSet) -> list[Path]:
    directory = Path(directory)
    paths = []
    for w, (a, seed) in enumerate(zip(ts.matrices, ts.seeds)):
        p = directory / f"transform_{w:03d}.bin"
        write_complex(p, {"kind": "transform", "channel": w, "seed": seed,
                          "master_seed": ts.master_seed}, a)
        paths.append(p)
    return paths


def write_dataset_cache(directory, ds: Dataset) -> list[Path]:
    directory = Path(directory)
    paths = []
    for w in range(ds.transforms.n_channels):
        for split in SPLITS:
            x, y = ds.pairs(w, split)
            p = directory / f"data_{w:03d}_{split}.bin"
            write_complex(p, {"kind": "dataset", "channel": w, "split": split,
                              "master_seed": ds.master_seed, "count": len(x),
                              "shape": [x.shape[1], y.shape[1]]}, x, y)
            paths.append(p)
    return paths
