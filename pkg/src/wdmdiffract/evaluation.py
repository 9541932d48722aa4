"""Realized transforms, accuracy metrics and the bit-depth / jitter sweeps."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from . import stack
from .taskgen import Dataset, TransformSet
from .training import channel_loss


class MetricError(ValueError):
    pass


def extract_transform(model: stack.DiffractiveModel, channel: int,
                      wavelength: float | None = None) -> np.ndarray:
    """Probe the stack with each standard-basis FOV field; returns N_o x N_i.

    Exact because the forward model is linear in the input field.
    """
    n_in = model.geometry.fov_pixels
    outputs = stack.forward(model, np.eye(n_in, dtype=np.complex128), channel, wavelength)
    return outputs.T


def _vec(a) -> np.ndarray:
    return np.asarray(a, dtype=np.complex128).ravel(order="F")


def scale_match(a, a_prime) -> complex:
    """Least-squares complex scale m minimizing ||a - m a'||; 0 if a' = 0."""
    a, ap = _vec(a), _vec(a_prime)
    den = np.vdot(ap, ap).real
    return 0j if den == 0 else complex(np.vdot(ap, a) / den)


def mse_transformation(a, a_prime) -> float:
    a_v, ap_v = _vec(a), _vec(a_prime)
    if a_v.shape != ap_v.shape:
        raise MetricError(f"shape mismatch {np.shape(a)} vs {np.shape(a_prime)}")
    m = scale_match(a_v, ap_v)
    return float(np.mean(np.abs(a_v - m * ap_v) ** 2))


def cosine_similarity(a, a_prime) -> float:
    a_v, ap_v = _vec(a), _vec(a_prime)
    if a_v.shape != ap_v.shape:
        raise MetricError(f"shape mismatch {np.shape(a)} vs {np.shape(a_prime)}")
    if not np.any(a_v) or not np.any(ap_v):
        raise MetricError("cosine similarity is undefined for a zero matrix")
    # the |m| of the scale-matched a' cancels, so a' is used directly; this
    # also covers m = 0 (orthogonal matrices)
    return float(abs(np.vdot(a_v, ap_v)) / (np.linalg.norm(a_v) * np.linalg.norm(ap_v)))


def mse_output(model, inputs, targets, channel: int, wavelength: float | None = None,
               chunk: int = 1024):
    """Mean and per-sample normalized output MSE over a split."""
    if len(inputs) == 0:
        raise MetricError("empty evaluation split")
    per = np.concatenate([
        channel_loss(targets[lo:lo + chunk],
                     stack.forward(model, inputs[lo:lo + chunk], channel, wavelength))
        for lo in range(0, len(inputs), chunk)])
    return float(per.mean()), per


def diffraction_efficiency(model, inputs, channel: int, wavelength: float | None = None,
                           chunk: int = 1024) -> float:
    if len(inputs) == 0:
        raise MetricError("empty evaluation split")
    ratios = []
    for lo in range(0, len(inputs), chunk):
        x = inputs[lo:lo + chunk]
        out = stack.forward(model, x, channel, wavelength)
        in_e = np.sum(np.abs(x) ** 2, -1)
        if np.any(in_e == 0):
            raise MetricError("input field has zero energy")
        ratios.append(np.sum(np.abs(out) ** 2, -1) / in_e)
    return float(np.concatenate(ratios).mean())


@dataclass
class MetricsRecord:
    channel: int
    lambda_over_lambda_m: float
    delta_lambda_over_lambda_m: float
    bit_depth: int | None
    mse_transformation: float
    cos_sim: float
    mse_output: float
    mse_output_std: float
    eta: float


def evaluate_channel(model, transforms: TransformSet, dataset: Dataset, channel: int,
                     delta: float = 0.0) -> MetricsRecord:
    lam = model.geometry.channels[channel]
    shifted = lam + delta
    if not shifted > 0:
        raise MetricError(f"shifted wavelength {shifted} is not positive")
    wavelength = None if delta == 0 else shifted
    x, y = dataset.pairs(channel, "test")
    a_prime = extract_transform(model, channel, wavelength)
    a = transforms.matrices[channel]
    mean, per = mse_output(model, x, y, channel, wavelength)
    return MetricsRecord(
        channel=channel, lambda_over_lambda_m=lam, delta_lambda_over_lambda_m=delta,
        bit_depth=model.bit_depth, mse_transformation=mse_transformation(a, a_prime),
        cos_sim=cosine_similarity(a, a_prime), mse_output=mean,
        mse_output_std=float(per.std()),
        eta=diffraction_efficiency(model, x, channel, wavelength))


def evaluate(model, transforms, dataset) -> list[MetricsRecord]:
    return [evaluate_channel(model, transforms, dataset, w)
            for w in range(model.geometry.n_channels)]


def sweep_jitter(model, transforms, dataset, channel: int, offsets) -> list[MetricsRecord]:
    """Metrics of one channel illuminated at lambda_w + delta for each offset."""
    return [evaluate_channel(model, transforms, dataset, channel, float(d)) for d in offsets]


def sweep_bitdepth(model, transforms, dataset, depths) -> dict[int, list[MetricsRecord]]:
    """Post-hoc quantize a copy of a continuous model at each bit depth."""
    out = {}
    for q in depths:
        if not 1 <= int(q) <= 32:
            raise MetricError(f"bit depth must be in 1..32, got {q}")
        out[int(q)] = evaluate(model.copy(bit_depth=int(q)), transforms, dataset)
    return out


def summarize(records: list[MetricsRecord]) -> dict:
    keys = ("mse_transformation", "cos_sim", "mse_output", "eta")
    vals = {k: np.array([getattr(r, k) for r in records]) for k in keys}
    return {**{f"{k}_mean": float(v.mean()) for k, v in vals.items()},
            **{f"{k}_std": float(v.std()) for k, v in vals.items()}}


METRICS_COLUMNS = ("run_id", "N_w", "N", "K", "channel", "lambda_over_lambda_m", "bit_depth",
                   "delta_lambda_over_lambda_m", "mse_transformation", "cos_sim",
                   "mse_output", "eta")


def metrics_rows(records, model, run_id: str) -> list[dict]:
    g = model.geometry
    rows = []
    for r in records:
        d = asdict(r)
        rows.append({
            "run_id": run_id, "N_w": g.n_channels, "N": g.neurons, "K": g.layers,
            "channel": r.channel,
            "bit_depth": "continuous" if r.bit_depth is None else r.bit_depth,
            **{k: repr(float(d[k])) for k in ("lambda_over_lambda_m",
                                              "delta_lambda_over_lambda_m",
                                              "mse_transformation", "cos_sim",
                                              "mse_output", "eta")},
        })
    return rows


def write_metrics(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
