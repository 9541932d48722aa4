import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wdmdiffract.field import bin_fov, embed_fov
from wdmdiffract.materials import DISPERSION_FREE, Material
from wdmdiffract.propagation import propagate
from wdmdiffract.stack import (H_BASE, H_MAX, ConfigurationError, DiffractiveModel,
                               StackGeometry, build_model, channel_ladder, forward,
                               load_checkpoint, quantize, save_checkpoint, simulate, thickness,
                               transmission)

from conftest import crandn, rel_err


def test_thickness_examples():
    assert thickness(0.0) == pytest.approx(0.625)
    assert thickness(0.0) + H_BASE == pytest.approx(0.875)
    assert thickness(np.pi / 2) == pytest.approx(H_MAX)
    assert thickness(-np.pi / 2) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=50)
@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_thickness_bounds(hv):
    h = thickness(hv) + H_BASE
    assert H_BASE <= h <= H_BASE + H_MAX


def test_quantize_examples():
    assert quantize(0.6 * H_MAX, 1) == H_MAX
    assert quantize(0.4 * H_MAX, 2) == pytest.approx(H_MAX / 3)
    assert quantize(0.5 * H_MAX, 1) == H_MAX  # tie rounds up
    x = np.linspace(0, H_MAX, 101)
    assert np.max(abs(quantize(x, 32) - x)) <= H_MAX / (2**32 - 1)


def test_quantize_level_count():
    x = np.linspace(0, H_MAX, 5001)
    for q in (1, 2, 3, 4):
        assert len(np.unique(quantize(x, q))) == 2**q


@settings(max_examples=60)
@given(st.floats(0, H_MAX), st.integers(1, 32))
def test_quantize_idempotent(x, q):
    once = quantize(x, q)
    assert quantize(once, q) == once


def test_quantize_rejects_depth():
    for q in (0, 33):
        with pytest.raises(ConfigurationError):
            quantize(0.1, q)


def test_transmission_examples():
    assert transmission(0.0, 0.97, DISPERSION_FREE) == 1
    h = np.linspace(0, 2, 17)
    np.testing.assert_allclose(abs(transmission(h, 1.0875, DISPERSION_FREE)), 1.0, rtol=1e-15)
    t = transmission(1.0 / 0.72, 1.0, DISPERSION_FREE)
    assert abs(t - 1) < 1e-12
    lossy = Material("lossy", 1.6, 0.05)
    assert abs(transmission(0.5, 1.0, lossy)) == pytest.approx(np.exp(-2 * np.pi * 0.05 * 0.5))


def test_channel_ladder():
    assert channel_ladder(1) == (1.0,)
    assert [round(x, 4) for x in channel_ladder(4)] == [0.9125, 0.9708, 1.0292, 1.0875]
    for n in (2, 3, 8, 184):
        lad = channel_ladder(n)
        assert abs(np.mean(lad) - 1.0) < 1e-12
        assert lad[0] == 0.9125 and lad[-1] == pytest.approx(1.0875)


def test_geometry_defaults():
    g = StackGeometry(8, 32, 5, channel_ladder(2))
    assert g.neurons == 8 * 32 * 32
    assert g.distance == 0.5 * 32 * 0.5
    assert g.grid_side == 32
    small = StackGeometry(4, 6, 3, (1.0,))
    assert small.grid_side == 12 and small.distance == 1.5
    with pytest.raises(ConfigurationError):
        StackGeometry(2, 8, 3, (1.0,), grid_side=8)


def test_build_model_deterministic_and_normal():
    g = StackGeometry(4, 50, 3, (1.0,))
    a, b = build_model(g, 17), build_model(g, 17)
    assert np.array_equal(a.latents, b.latents)
    assert not np.array_equal(a.latents, build_model(g, 18).latents)
    assert abs(a.latents.mean()) < 0.05
    assert 0.95 < a.latents.std() < 1.05


@pytest.fixture(scope="module")
def model8():
    return build_model(StackGeometry(8, 32, 4, channel_ladder(2)), 3)


def test_forward_zero_input(model8):
    assert not np.any(forward(model8, np.zeros(16, complex), 1))


def test_forward_linearity(model8, rng):
    for _ in range(5):
        i1, i2 = crandn(rng, 16), crandn(rng, 16)
        a, b = complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2))
        for w in (0, 1):
            lhs = forward(model8, a * i1 + b * i2, w)
            rhs = a * forward(model8, i1, w) + b * forward(model8, i2, w)
            assert rel_err(lhs, rhs) < 1e-10


def test_forward_channel_range(model8):
    with pytest.raises(ConfigurationError):
        forward(model8, np.ones(16, complex), 2)
    with pytest.raises(ConfigurationError):
        forward(model8, np.ones(16, complex), 0, wavelength=-0.1)


def test_transparent_stack_is_repeated_free_space(rng):
    g = StackGeometry(3, 24, 3, (1.0,))
    h_learn = 1.0 / 0.72 - H_BASE
    latents = np.full((3, 24, 24), np.arcsin(2 * h_learn / H_MAX - 1))
    model = DiffractiveModel(g, latents)
    x = crandn(rng, 9)
    u = embed_fov(x, g.grid_side)
    for _ in range(g.layers + 1):
        u = propagate(u, g.distance, 1.0)
    assert rel_err(forward(model, x, 0), bin_fov(u, 3)) < 1e-8


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), layer=st.integers(4, 20), k=st.integers(1, 4))
def test_lossless_stack_never_amplifies(seed, layer, k):
    rng = np.random.default_rng(seed)
    model = build_model(StackGeometry(k, layer, 2, channel_ladder(3)), seed)
    x = crandn(rng, 5, 4)
    for w in range(3):
        out = forward(model, x, w)
        assert np.all(np.sum(abs(out) ** 2, -1) <= np.sum(abs(x) ** 2, -1) * (1 + 1e-12))


def test_single_channel_matches_multichannel(model8, rng):
    x = crandn(rng, 3, 16)
    lam = model8.geometry.channels[1]
    single = build_model(StackGeometry(8, 32, 4, (lam,)), 3)
    assert np.array_equal(single.latents, model8.latents)
    both = simulate(model8, np.stack([x, x]), model8.geometry.channels)
    assert np.array_equal(forward(single, x, 0), both[1])
    assert np.array_equal(forward(model8, x, 1), both[1])


def test_quantized_model_uses_levels():
    m = build_model(StackGeometry(1, 8, 1, (1.0,)), 0, bit_depth=2)
    assert len(np.unique(m.learnable_thickness())) <= 4
    h = m.heights()
    assert np.all((h >= H_BASE) & (h <= H_BASE + H_MAX))


def test_checkpoint_round_trip(tmp_path):
    table = Material("tab", table=((0.9, 1.5, 0.0), (1.1, 1.4, 0.01)))
    m = build_model(StackGeometry(3, 10, 2, channel_ladder(3)), 9, table, bit_depth=7)
    m.latents[0, 0, 0] = np.nextafter(1.0, 2.0)
    extra = np.arange(5.0)
    save_checkpoint(tmp_path / "m.ckpt", m, epoch=12, arrays={"alpha": extra})
    m2, header, arrays = load_checkpoint(tmp_path / "m.ckpt")
    assert np.array_equal(m2.latents, m.latents)
    assert m2.geometry == m.geometry and m2.material == m.material
    assert (m2.bit_depth, m2.seed, header["epoch"]) == (7, 9, 12)
    assert np.array_equal(arrays["alpha"], extra)
    save_checkpoint(tmp_path / "again.ckpt", m2, epoch=12, arrays={"alpha": extra})
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"hello")
    with pytest.raises(ConfigurationError):
        load_checkpoint(p)
