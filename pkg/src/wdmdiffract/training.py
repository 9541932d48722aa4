"""Losses, exact gradients, AdamW and the epoch loop.

Gradients with respect to complex fields are carried as dL/d conj(z), so a
real loss changes by 2 Re(sum(conj(G) dz)) under a perturbation dz.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from .stack import DiffractiveModel, NumericalError, backward, simulate
from .taskgen import Dataset

log = logging.getLogger(__name__)

ETA_TH_LOSSLESS = 3e-4
ETA_TH_ABSORBING = 3e-5


class DegenerateFieldError(ValueError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, message, model=None, state=None):
        super().__init__(message)
        self.model = model
        self.state = state


def channel_loss(target, output, *, with_grad: bool = False):
    """Energy-normalized MSE between target and output FOV fields.

    Works on the last axis; leading axes are batch dimensions.  With
    ``with_grad`` also returns dL/d conj(output).  An all-zero output gives
    the loss 1/N and zero gradient.
    """
    o = np.asarray(target, dtype=np.complex128)
    y = np.asarray(output, dtype=np.complex128)
    if o.shape != y.shape:
        raise ValueError(f"shape mismatch {o.shape} vs {y.shape}")
    n = o.shape[-1]
    energy = np.sum(np.abs(o) ** 2, axis=-1, keepdims=True)
    if np.any(energy == 0):
        raise DegenerateFieldError("target field has zero energy")
    x = o / np.sqrt(energy)
    c = np.sum(x * y.conj(), axis=-1, keepdims=True)
    s = np.sum(np.abs(y) ** 2, axis=-1, keepdims=True)
    dead = s == 0
    s_safe = np.where(dead, 1.0, s)
    sigma_out = np.where(dead, 0.0, c / s_safe)
    loss = np.sum(np.abs(x - sigma_out * y) ** 2, axis=-1) / n
    if not with_grad:
        return loss
    grad = -(x * c.conj() / s_safe - (np.abs(c) ** 2) * y / s_safe**2) / n
    return loss, np.where(dead, 0.0, grad)


def efficiency_terms(outputs, inputs, eta_th: float):
    """Mean diffraction efficiency over a batch and its hinge penalty.

    Leading axes before the last two are kept (e.g. channels).
    """
    out_e = np.sum(np.abs(outputs) ** 2, axis=-1)
    in_e = np.sum(np.abs(inputs) ** 2, axis=-1)
    if np.any(in_e == 0):
        raise DegenerateFieldError("input field has zero energy")
    eta = np.mean(out_e / in_e, axis=-1)
    return eta, np.maximum(eta_th - eta, 0.0)


def total_loss(mse, alpha, penalty=None, beta: float = 0.0) -> float:
    mse = np.asarray(mse, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    terms = alpha * mse
    if beta and penalty is not None:
        terms = terms + beta * np.asarray(penalty, dtype=float)
    return float(np.mean(terms))


def reference_channel(n_channels: int) -> int:
    """Zero-based middle channel (the lower middle for even counts)."""
    return (n_channels + 1) // 2 - 1


def update_spectral_weights(alpha, losses, ref: int) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    losses = np.asarray(losses, dtype=float)
    new = np.maximum(0.1 * (losses - losses[ref]) + alpha, 0.0)
    new[ref] = alpha[ref]
    return new


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    epochs: int = 50
    batch_size: int = 8
    beta: float = 0.0
    eta_th: float | None = None
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    decay: float = 0.5
    decay_every: int = 10
    adaptive_alpha: bool = True
    deterministic: bool = True
    threads: int = 1
    seed: int = 0

    def lr(self, epoch: int) -> float:
        return self.lr0 * self.decay ** (epoch // self.decay_every)

    def threshold(self, model: DiffractiveModel) -> float:
        if self.eta_th is not None:
            return self.eta_th
        return ETA_TH_LOSSLESS if model.material.lossless else ETA_TH_ABSORBING


@dataclass
class TrainState:
    alpha: np.ndarray
    m: np.ndarray
    v: np.ndarray
    ref: int
    step: int = 0
    epoch: int = 0
    best_val: float = np.inf
    best_latents: np.ndarray | None = None
    best_epoch: int = -1

    @classmethod
    def fresh(cls, model: DiffractiveModel) -> "TrainState":
        n = model.geometry.n_channels
        return cls(np.ones(n), np.zeros_like(model.latents), np.zeros_like(model.latents),
                   reference_channel(n))


def optimizer_step(state: TrainState, grad: np.ndarray, model: DiffractiveModel,
                   lr: float, cfg: TrainConfig) -> None:
    """AdamW with decoupled weight decay, updating ``model`` in place."""
    b1, b2 = cfg.betas
    state.step += 1
    p = model.latents
    p *= 1.0 - lr * cfg.weight_decay
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1**state.step)
    v_hat = state.v / (1 - b2**state.step)
    p -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass
class BatchResult:
    loss: float
    mse: np.ndarray
    eta: np.ndarray
    grad: np.ndarray = field(repr=False)


def _loss_and_output_grad(outputs, targets, inputs, alpha, beta, eta_th):
    n_ch, batch = outputs.shape[:2]
    mse_each, g = channel_loss(targets, outputs, with_grad=True)
    mse = mse_each.mean(axis=1)
    eta, penalty = efficiency_terms(outputs, inputs, eta_th)
    grad = g * (alpha[:, None, None] / (n_ch * batch))
    if beta:
        in_e = np.sum(np.abs(inputs) ** 2, axis=-1, keepdims=True)
        active = (penalty > 0)[:, None, None]
        grad = grad - active * beta * outputs / (n_ch * batch * in_e)
    return mse, eta, penalty, grad


def gradients(model: DiffractiveModel, inputs, targets, alpha, *, beta: float = 0.0,
              eta_th: float = ETA_TH_LOSSLESS, channels=None,
              deterministic: bool = True, threads: int = 1) -> BatchResult:
    """Total loss over a batch of shape (C, B, N) and its latent gradient."""
    lams = model.geometry.channels if channels is None else tuple(channels)
    alpha = np.asarray(alpha, dtype=float)
    if deterministic or threads <= 1:
        out, tape = simulate(model, inputs, lams, keep_tape=True)
        mse, eta, penalty, g_out = _loss_and_output_grad(
            out, targets, inputs, alpha, beta, eta_th)
        grad = backward(model, tape, g_out)
    else:
        n_ch = len(lams)
        mse, eta, penalty = np.zeros(n_ch), np.zeros(n_ch), np.zeros(n_ch)
        grad = np.zeros_like(model.latents)

        def one(c):
            out, tape = simulate(model, inputs[c:c + 1], lams[c:c + 1], keep_tape=True)
            m, e, p, g_out = _loss_and_output_grad(
                out, targets[c:c + 1], inputs[c:c + 1], alpha[c:c + 1], beta, eta_th)
            return c, m[0], e[0], p[0], backward(model, tape, g_out / n_ch)

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for fut in as_completed([pool.submit(one, c) for c in range(n_ch)]):
                c, mse[c], eta[c], penalty[c], g = fut.result()
                grad += g
    loss = total_loss(mse, alpha, penalty, beta)
    return BatchResult(loss, mse, eta, grad)


def evaluate_split(model: DiffractiveModel, inputs, targets, chunk: int = 256):
    """Per-channel mean loss and efficiency over (C, n, N) arrays."""
    losses, etas = [], []
    for lo in range(0, inputs.shape[1], chunk):
        x = inputs[:, lo:lo + chunk]
        out = simulate(model, x, model.geometry.channels)
        losses.append(channel_loss(targets[:, lo:lo + chunk], out))
        etas.append(np.sum(np.abs(out) ** 2, -1) / np.sum(np.abs(x) ** 2, -1))
    return np.concatenate(losses, axis=1).mean(axis=1), np.concatenate(etas, axis=1).mean(axis=1)


@dataclass
class FitResult:
    model: DiffractiveModel
    state: TrainState
    history: list[dict]
    last_model: DiffractiveModel


def fit(model: DiffractiveModel, dataset: Dataset, cfg: TrainConfig,
        state: TrainState | None = None, on_epoch=None) -> FitResult:
    """Train ``model`` in place; return the best-validation snapshot.

    ``state`` resumes a previous run at ``state.epoch``.  ``on_epoch`` is
    called with (model, state, rows) after every epoch.
    """
    if dataset.transforms.n_channels != model.geometry.n_channels:
        raise ValueError(
            f"dataset has {dataset.transforms.n_channels} channels, model has "
            f"{model.geometry.n_channels}")
    state = state or TrainState.fresh(model)
    eta_th = cfg.threshold(model)
    x_train, y_train = dataset.stacked("train")
    x_val, y_val = dataset.stacked("val")
    n = x_train.shape[1]
    history = []
    for epoch in range(state.epoch, cfg.epochs):
        lr = cfg.lr(epoch)
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(cfg.seed, spawn_key=(3, epoch))))
        order = rng.permutation(n)
        mse_sum = np.zeros(model.geometry.n_channels)
        good = model.latents.copy()
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            try:
                with np.errstate(invalid="ignore", over="ignore"):
                    res = gradients(model, x_train[:, idx], y_train[:, idx], state.alpha,
                                    beta=cfg.beta, eta_th=eta_th,
                                    deterministic=cfg.deterministic, threads=cfg.threads)
            except NumericalError as exc:
                model.latents = good
                raise DivergenceError(f"epoch {epoch}, step {state.step}: {exc}",
                                      model, state) from exc
            if not np.isfinite(res.loss) or not np.all(np.isfinite(res.grad)):
                model.latents = good
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, step {state.step}", model, state)
            optimizer_step(state, res.grad, model, lr, cfg)
            if cfg.adaptive_alpha:
                state.alpha = update_spectral_weights(state.alpha, res.mse, state.ref)
            mse_sum += res.mse * len(idx)
        val_mse, val_eta = evaluate_split(model, x_val, y_val)
        mean_val = float(np.mean(val_mse))
        if not np.isfinite(mean_val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", model, state)
        if mean_val < state.best_val:
            state.best_val = mean_val
            state.best_latents = model.latents.copy()
            state.best_epoch = epoch
        state.epoch = epoch + 1
        rows = [dict(epoch=epoch, channel=c, train_mse=float(mse_sum[c] / n),
                     val_mse=float(val_mse[c]), alpha=float(state.alpha[c]),
                     eta=float(val_eta[c]), lr=lr)
                for c in range(model.geometry.n_channels)]
        history.extend(rows)
        log.info("epoch %d lr %.3g train %.4g val %.4g", epoch, lr,
                 float(np.mean(mse_sum / n)), mean_val)
        if on_epoch is not None:
            on_epoch(model, state, rows)
    best = model.copy()
    if state.best_latents is not None:
        best.latents = state.best_latents.copy()
    return FitResult(best, state, history, model)


HISTORY_COLUMNS = ("epoch", "channel", "train_mse", "val_mse", "alpha", "eta", "lr")


def write_history(path, rows, append: bool = False) -> None:
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
        if not append:
            writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
