"""Run configuration: an INI file whose lengths are in units of lambda_m."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .materials import Material, resolve
from .stack import H_BASE, H_MAX, StackGeometry, channel_ladder
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeometrySection:
    layers: int = 8
    layer_side: int = 32
    fov_side: int = 5
    n_channels: int = 1
    channels: tuple[float, ...] = ()
    grid_side: int = 0
    distance: float = 0.0
    h_base: float = H_BASE
    h_max: float = H_MAX
    lambda_m_meters: float = 8e-4


@dataclass(frozen=True)
class MaterialSection:
    material: str = "dispersion-free"


@dataclass(frozen=True)
class TaskSection:
    master_seed: int
    train: int = 55000
    val: int = 5000
    test: int = 10000


@dataclass(frozen=True)
class TrainingSection:
    lr0: float = 1e-3
    epochs: int = 50
    batch_size: int = 8
    beta: float = 0.0
    eta_th: float | None = None
    weight_decay: float = 1e-2
    decay: float = 0.5
    decay_every: int = 10
    bit_depth: int | None = None
    adaptive_alpha: bool = True
    deterministic: bool = True


@dataclass(frozen=True)
class OutputSection:
    dir: str = "run"


@dataclass(frozen=True)
class RunConfig:
    task: TaskSection
    geometry: GeometrySection = field(default_factory=GeometrySection)
    material: MaterialSection = field(default_factory=MaterialSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    output: OutputSection = field(default_factory=OutputSection)
    base_dir: str = field(default=".", compare=False)

    def stack_geometry(self) -> StackGeometry:
        g = self.geometry
        chans = g.channels or channel_ladder(g.n_channels)
        return StackGeometry(g.layers, g.layer_side, g.fov_side, chans, g.grid_side, g.distance)

    def load_material(self) -> Material:
        return resolve(self.material.material, self.base_dir)

    def train_config(self, threads: int = 1) -> TrainConfig:
        t = self.training
        return TrainConfig(lr0=t.lr0, epochs=t.epochs, batch_size=t.batch_size, beta=t.beta,
                           eta_th=t.eta_th, weight_decay=t.weight_decay, decay=t.decay,
                           decay_every=t.decay_every, adaptive_alpha=t.adaptive_alpha,
                           deterministic=t.deterministic, threads=threads,
                           seed=self.task.master_seed)

    def output_dir(self) -> Path:
        p = Path(self.output.dir)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, task=replace(self.task, master_seed=seed))


_SECTIONS = {"geometry": GeometrySection, "material": MaterialSection, "task": TaskSection,
             "training": TrainingSection, "output": OutputSection}
_OPTIONAL_INT = {("training", "bit_depth"): "continuous"}
_OPTIONAL_FLOAT = {("training", "eta_th"): "auto"}


def _convert(section: str, f, raw: str):
    name = f.name
    raw = raw.strip()
    if (section, name) in _OPTIONAL_INT:
        return None if raw.lower() in ("", _OPTIONAL_INT[section, name]) else int(raw)
    if (section, name) in _OPTIONAL_FLOAT:
        return None if raw.lower() in ("", _OPTIONAL_FLOAT[section, name]) else float(raw)
    if name == "channels":
        return tuple(float(x) for x in raw.replace(",", " ").split())
    if f.type in ("int", int):
        return int(raw)
    if f.type in ("float", float):
        return float(raw)
    if f.type in ("bool", bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return raw


def parse(text: str, base_dir=".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = set(cp.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        values = dict(cp[section]) if cp.has_section(section) else {}
        known = {f.name: f for f in fields(cls)}
        extra = set(values) - set(known)
        if extra:
            raise ConfigError(f"unknown field(s) in [{section}]: {', '.join(sorted(extra))}")
        args = {}
        for name, raw in values.items():
            try:
                args[name] = _convert(section, known[name], raw)
            except ValueError as exc:
                raise ConfigError(f"invalid value for {section}.{name}: {exc}") from exc
        try:
            kwargs[section] = cls(**args)
        except TypeError:
            missing = [n for n, f in known.items()
                       if n not in args and f.default is f.default_factory]
            raise ConfigError(
                f"missing required field(s): {', '.join(f'{section}.{n}' for n in missing)}"
            ) from None
    return RunConfig(**kwargs, base_dir=str(base_dir))


def load(path) -> RunConfig:
    path = Path(path)
    return parse(path.read_text(), base_dir=path.parent)


def _format(section: str, name: str, value) -> str:
    if value is None:
        return _OPTIONAL_INT.get((section, name)) or _OPTIONAL_FLOAT[section, name]
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def serialize(cfg: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{f.name} = {_format(section, f.name, getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)
