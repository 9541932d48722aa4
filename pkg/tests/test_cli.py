import numpy as np
import pytest

from wdmdiffract import config as cfgmod
from wdmdiffract.cli import (EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, cmd_gen_tasks,
                             main)
from wdmdiffract.stack import load_checkpoint
from wdmdiffract.taskgen import read_complex

TINY = """
[geometry]
layers = 2
layer_side = 8
fov_side = 2
n_channels = 2

[task]
master_seed = 3
train = 40
val = 8
test = 8

[training]
epochs = {epochs}
decay_every = 2

[output]
dir = out
"""


@pytest.fixture
def tiny(tmp_path):
    def make(epochs=3, text=None):
        p = tmp_path / "run.ini"
        p.write_text(text if text is not None else TINY.format(epochs=epochs))
        return p
    return make


def test_config_defaults_follow_training_recipe():
    cfg = cfgmod.parse("[task]\nmaster_seed = 1\n")
    t = cfg.training
    assert (t.lr0, t.batch_size, t.epochs, t.decay, t.decay_every) == (1e-3, 8, 50, 0.5, 10)
    assert cfg.geometry.layers == 8
    assert (cfg.geometry.h_max, cfg.geometry.h_base) == (1.25, 0.25)
    assert (cfg.task.train, cfg.task.val, cfg.task.test) == (55000, 5000, 10000)
    assert t.eta_th is None and t.bit_depth is None


def test_config_round_trip():
    text = TINY.format(epochs=3)
    cfg = cfgmod.parse(text.replace("[output]", "[material]\nmaterial = glass.txt\n\n[output]"))
    cfg = cfgmod.replace(cfg, training=cfgmod.replace(cfg.training, eta_th=3e-5, bit_depth=8,
                                                      adaptive_alpha=False))
    cfg = cfgmod.replace(cfg, geometry=cfgmod.replace(cfg.geometry, channels=(0.95, 1.05)))
    assert cfgmod.parse(cfgmod.serialize(cfg)) == cfg
    plain = cfgmod.parse("[task]\nmaster_seed = 9\n")
    assert cfgmod.parse(cfgmod.serialize(plain)) == plain


def test_config_errors():
    with pytest.raises(cfgmod.ConfigError, match="task.master_seed"):
        cfgmod.parse("[geometry]\nlayers = 2\n")
    with pytest.raises(cfgmod.ConfigError, match="geometry.layers"):
        cfgmod.parse("[task]\nmaster_seed = 1\n[geometry]\nlayers = two\n")
    with pytest.raises(cfgmod.ConfigError, match="bogus"):
        cfgmod.parse("[task]\nmaster_seed = 1\nbogus = 2\n")
    with pytest.raises(cfgmod.ConfigError, match="section"):
        cfgmod.parse("[task]\nmaster_seed = 1\n[extra]\n")


def test_gen_tasks_writes_matrices_and_summary(tiny, tmp_path, capsys):
    assert main(["gen-tasks", "--config", str(tiny()), "--cache"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "max" in out and "1 pairs" in out
    files = sorted(p.name for p in (tmp_path / "out" / "tasks").iterdir())
    assert files[-2:] == ["transform_000.bin", "transform_001.bin"]
    assert len(files) == 8
    first = {p.name: p.read_bytes() for p in (tmp_path / "out" / "tasks").iterdir()}
    assert main(["gen-tasks", "--config", str(tiny()), "--cache"]) == EXIT_OK
    again = {p.name: p.read_bytes() for p in (tmp_path / "out" / "tasks").iterdir()}
    assert first == again
    header, (a,) = read_complex(tmp_path / "out" / "tasks" / "transform_001.bin")
    assert a.shape == (4, 4) and header["master_seed"] == 3


def test_missing_seed_is_reported(tiny, capsys):
    path = tiny(text="[geometry]\nlayers = 1\n")
    assert main(["gen-tasks", "--config", str(path)]) == EXIT_CONFIG
    assert "task.master_seed" in capsys.readouterr().err


def test_seed_override(tiny, tmp_path):
    cfg = cfgmod.load(tiny()).with_seed(77)
    cmd_gen_tasks(cfg, tmp_path / "o")
    header, _ = read_complex(tmp_path / "o" / "tasks" / "transform_000.bin")
    assert header["master_seed"] == 77


def test_train_then_eval(tiny, tmp_path):
    cfg = tiny()
    assert main(["train", "--config", str(cfg)]) == EXIT_OK
    out = tmp_path / "out"
    history = (out / "history.csv").read_text().splitlines()
    assert len(history) == 1 + 3 * 2
    model, header, _ = load_checkpoint(out / "best.ckpt")
    assert model.geometry.layers == 2
    assert main(["eval", "--config", str(cfg)]) == EXIT_OK
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 1 + 2
    assert main(["eval", "--config", str(cfg), "--jitter", "0,0.005,0.01"]) == EXIT_OK
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 2
    assert main(["eval", "--config", str(cfg), "--bitdepth", "8,4"]) == EXIT_OK
    rows = (out / "metrics.csv").read_text().splitlines()
    assert [r.split(",")[6] for r in rows[1:]] == ["8", "8", "4", "4"]


def test_resume_continues_schedule(tiny, tmp_path):
    full_dir, part_dir = tmp_path / "full", tmp_path / "part"
    assert main(["train", "--config", str(tiny(epochs=4)), "--out", str(full_dir)]) == EXIT_OK
    assert main(["train", "--config", str(tiny(epochs=2)), "--out", str(part_dir)]) == EXIT_OK
    assert main(["train", "--config", str(tiny(epochs=4)), "--out", str(part_dir),
                 "--resume", str(part_dir / "last.ckpt")]) == EXIT_OK
    assert (full_dir / "history.csv").read_bytes() == (part_dir / "history.csv").read_bytes()
    lrs = [r.split(",")[-1] for r in (part_dir / "history.csv").read_text().splitlines()[1:]]
    assert lrs == ["0.001"] * 4 + ["0.0005"] * 4
    a, _, _ = load_checkpoint(full_dir / "best.ckpt")
    b, _, _ = load_checkpoint(part_dir / "best.ckpt")
    assert np.array_equal(a.latents, b.latents)


def test_deterministic_history_bytes(tiny, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--config", str(tiny()), "--deterministic",
                     "--out", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a" / "history.csv").read_bytes() == \
        (tmp_path / "b" / "history.csv").read_bytes()


def test_eval_refuses_mismatched_checkpoint(tiny, tmp_path, capsys):
    assert main(["train", "--config", str(tiny(epochs=1))]) == EXIT_OK
    other = tmp_path / "other.ini"
    other.write_text(TINY.format(epochs=1).replace("layer_side = 8", "layer_side = 10"))
    code = main(["eval", "--config", str(other), "--checkpoint",
                 str(tmp_path / "out" / "best.ckpt")])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "layer_side=10" in err and "layer_side=8" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tiny, tmp_path):
    path = tiny(text=TINY.format(epochs=1).replace("[training]", "[training]\nlr0 = inf"))
    assert main(["train", "--config", str(path)]) == EXIT_NUMERIC


def test_io_error_exit_code(tiny, tmp_path):
    blocker = tmp_path / "blocked"
    blocker.write_text("not a directory")
    assert main(["gen-tasks", "--config", str(tiny()), "--out", str(blocker / "x")]) == EXIT_IO
    assert main(["gen-tasks", "--config", str(tmp_path / "missing.ini")]) == EXIT_IO
