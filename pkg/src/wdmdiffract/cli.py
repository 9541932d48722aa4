"""Command line entry point: gen-tasks, train, eval and all."""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import evaluation as ev
from .materials import MaterialError
from .stack import (ConfigurationError, NumericalError, build_model, load_checkpoint,
                    save_checkpoint)
from .taskgen import gen_dataset, gen_transforms, write_dataset_cache, write_transforms
from .training import TrainState, fit, write_history

log = logging.getLogger("wdmdiffract")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class GeometryMismatch(ConfigurationError):
    pass


def _tasks(cfg: cfgmod.RunConfig):
    n = cfg.stack_geometry().fov_pixels
    ts = gen_transforms(cfg.stack_geometry().n_channels, n, n, cfg.task.master_seed)
    ds = gen_dataset(ts, (cfg.task.train, cfg.task.val, cfg.task.test), cfg.task.master_seed)
    return ts, ds


def pairwise_cosine(ts) -> list[tuple[int, int, float]]:
    return [(u, v, ev.cosine_similarity(ts.matrices[u], ts.matrices[v]))
            for u, v in itertools.combinations(range(ts.n_channels), 2)]


def cmd_gen_tasks(cfg: cfgmod.RunConfig, out: Path, cache: bool = False) -> list[Path]:
    ts, ds = _tasks(cfg)
    task_dir = out / "tasks"
    task_dir.mkdir(parents=True, exist_ok=True)
    paths = write_transforms(task_dir, ts)
    if cache:
        paths += write_dataset_cache(task_dir, ds)
    pairs = pairwise_cosine(ts)
    if pairs:
        worst = max(pairs, key=lambda p: p[2])
        print(f"pairwise |CosSim| over {len(pairs)} pairs: max {worst[2]:.4f} "
              f"(channels {worst[0]}, {worst[1]}), mean {np.mean([p[2] for p in pairs]):.4f}")
    else:
        print("single transform; no pairwise cosine similarity")
    return paths


_STATE_ARRAYS = ("adam_m", "adam_v", "alpha", "best_latents")


def _save_state(path, model, state: TrainState):
    arrays = {"adam_m": state.m, "adam_v": state.v, "alpha": state.alpha}
    if state.best_latents is not None:
        arrays["best_latents"] = state.best_latents
    save_checkpoint(path, model, epoch=state.epoch, arrays=arrays,
                    extra={"step": state.step, "ref": state.ref,
                           "best_val": state.best_val, "best_epoch": state.best_epoch})


def _load_state(path):
    model, header, arrays = load_checkpoint(path)
    extra = header["extra"]
    if "adam_m" not in arrays:
        raise ConfigurationError(f"{path} holds no optimizer state to resume from")
    state = TrainState(arrays["alpha"], arrays["adam_m"], arrays["adam_v"], extra["ref"],
                       extra["step"], header["epoch"], extra["best_val"],
                       arrays.get("best_latents"), extra["best_epoch"])
    return model, state


def check_geometry(expected, found, what: str) -> None:
    if asdict(expected) != asdict(found):
        raise GeometryMismatch(
            f"{what} geometry does not match the config\n  config:     {expected}\n"
            f"  checkpoint: {found}")


def cmd_train(cfg: cfgmod.RunConfig, out: Path, resume=None, threads: int = 1):
    ts, ds = _tasks(cfg)
    geometry = cfg.stack_geometry()
    tc = cfg.train_config(threads)
    out.mkdir(parents=True, exist_ok=True)
    history_path = out / "history.csv"
    if resume:
        model, state = _load_state(resume)
        check_geometry(geometry, model.geometry, str(resume))
        log.info("resuming at epoch %d, lr %.3g", state.epoch, tc.lr(state.epoch))
        append = history_path.exists()
    else:
        model = build_model(geometry, cfg.task.master_seed, cfg.load_material(),
                            bit_depth=cfg.training.bit_depth,
                            h_base=cfg.geometry.h_base, h_max=cfg.geometry.h_max)
        state = None
        append = False
    if not append:
        write_history(history_path, [])

    def on_epoch(m, st, rows):
        write_history(history_path, rows, append=True)
        _save_state(out / "last.ckpt", m, st)

    result = fit(model, ds, tc, state=state, on_epoch=on_epoch)
    save_checkpoint(out / "best.ckpt", result.model, epoch=result.state.best_epoch)
    return result


def cmd_eval(cfg: cfgmod.RunConfig, out: Path, checkpoint, jitter=None, bitdepth=None) -> Path:
    ts, ds = _tasks(cfg)
    model, _, _ = load_checkpoint(checkpoint)
    check_geometry(cfg.stack_geometry(), model.geometry, str(checkpoint))
    run_id = f"{Path(cfg.output.dir).name}-seed{cfg.task.master_seed}"
    rows = []
    if not jitter and not bitdepth:
        rows += ev.metrics_rows(ev.evaluate(model, ts, ds), model, run_id)
    if jitter:
        for w in range(model.geometry.n_channels):
            rows += ev.metrics_rows(ev.sweep_jitter(model, ts, ds, w, jitter), model, run_id)
    if bitdepth:
        for q, recs in ev.sweep_bitdepth(model, ts, ds, bitdepth).items():
            rows += ev.metrics_rows(recs, model, run_id)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "metrics.csv"
    ev.write_metrics(path, rows)
    return path


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI run configuration")
    common.add_argument("--seed", type=int, help="override task.master_seed")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--deterministic", action="store_true",
                        help="force fixed-order gradient reductions")
    common.add_argument("--out", help="output directory (default: output.dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wdmdiffract", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-tasks", parents=[common])
    g.add_argument("--cache", action="store_true", help="also write dataset cache files")
    t = sub.add_parser("train", parents=[common])
    t.add_argument("--resume", help="continue from a last.ckpt checkpoint")
    for name in ("eval", "all"):
        e = sub.add_parser(name, parents=[common])
        if name == "eval":
            e.add_argument("--checkpoint", help="model checkpoint (default OUT/best.ckpt)")
        else:
            e.add_argument("--resume", help="continue training from a last.ckpt checkpoint")
        e.add_argument("--jitter", type=_float_list, help="wavelength offsets in lambda_m units")
        e.add_argument("--bitdepth", type=_int_list, help="post-hoc bit depths")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.deterministic:
            cfg = replace(cfg, training=replace(cfg.training, deterministic=True))
        out = Path(args.out) if args.out else cfg.output_dir()
        from threadpoolctl import threadpool_limits
        with threadpool_limits(args.threads):
            if args.command == "gen-tasks":
                cmd_gen_tasks(cfg, out, args.cache)
            if args.command in ("train", "all"):
                if args.command == "all":
                    cmd_gen_tasks(cfg, out)
                cmd_train(cfg, out, args.resume, args.threads)
            if args.command in ("eval", "all"):
                ckpt = getattr(args, "checkpoint", None) or out / "best.ckpt"
                path = cmd_eval(cfg, out, ckpt, args.jitter, args.bitdepth)
                print(f"metrics written to {path}")
    except (cfgmod.ConfigError, ConfigurationError, MaterialError, ev.MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
