import dataclasses

import numpy as np
import pytest

from models import dcrn
from models.dcrn import (
    FULL_CHAIN,
    TINY_CHAIN,
    TOY_CHAIN,
    DcrnConfig,
    DenseBlock,
    build_dcrn,
    dcrn_forward,
    dcrn_preset,
    enhance,
    shape_plan,
)
from models.tensor import Tensor
from utils.dsp import ComplexSpectrogram, Waveform
from utils.error_handler import ConfigError, ShapeError


def _spectrogram(frames, bins, seed=0):
    rng = np.random.default_rng(seed)
    return ComplexSpectrogram(rng.normal(size=(frames, bins)), rng.normal(size=(frames, bins)))


@pytest.mark.parametrize("preset,chain", [("full", FULL_CHAIN), ("toy", TOY_CHAIN), ("tiny", TINY_CHAIN)])
def test_shape_plan_follows_chain(preset, chain):
    assert shape_plan(dcrn_preset(preset)) == list(chain)


def test_full_chain_layout():
    assert len(FULL_CHAIN) == 17
    assert FULL_CHAIN[0] == (2, 257) and FULL_CHAIN[8] == (512, 1) and FULL_CHAIN[-1] == (2, 257)
    assert "(512,1)" in dcrn.describe_chain(FULL_CHAIN)


def test_tiny_forward_traces_every_stage():
    model = build_dcrn(dcrn_preset("tiny"), seed=0)
    trace = []
    out = dcrn_forward(model, _spectrogram(5, 9), trace=trace)
    assert trace == list(TINY_CHAIN)
    assert out.real.shape == (5, 9)


def test_only_output_bias_gives_constant_output():
    model = build_dcrn(dcrn_preset("tiny"), seed=1)
    for param in model.parameters():
        param.data = np.zeros_like(param.data)
    model.named_parameters()["output.bias"].data = np.array([0.25, -0.5])
    out = dcrn_forward(model, _spectrogram(4, 9, seed=2))
    np.testing.assert_allclose(out.real, 0.25)
    np.testing.assert_allclose(out.imag, -0.5)


def test_dense_block_wiring():
    block = DenseBlock(4, 5, (3, 3), np.random.default_rng(0))
    assert [layer.plan.in_channels for layer in block.layers] == [4, 8, 12, 16, 20]

    for layer in block.layers:
        layer.weight.data = np.zeros_like(layer.weight.data)
    block.layers[-1].bias.data = np.array([-1.0, 0.0, 0.5, 2.0])
    out = block(Tensor(np.random.default_rng(1).normal(size=(4, 3, 6))))
    expected = np.where(block.layers[-1].bias.data > 0, block.layers[-1].bias.data,
                        np.expm1(block.layers[-1].bias.data))
    np.testing.assert_allclose(out.data, np.broadcast_to(expected[:, None, None], (4, 3, 6)))

    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((3, 3, 6))))


def test_subpixel_upsample():
    x = Tensor(np.arange(12.0).reshape(4, 1, 3))
    out = dcrn.subpixel_upsample(x)
    assert out.shape == (2, 1, 6)
    np.testing.assert_allclose(out.data[0, 0], [0, 3, 1, 4, 2, 5])
    with pytest.raises(ShapeError):
        dcrn.subpixel_upsample(Tensor(np.zeros((3, 1, 2))))


def test_bin_mismatch_is_rejected():
    model = build_dcrn(dcrn_preset("tiny"))
    with pytest.raises(ShapeError):
        dcrn_forward(model, _spectrogram(4, 8))


def test_enhance_keeps_length_and_matches_tensor_path():
    model = build_dcrn(dcrn_preset("tiny"), seed=3)
    samples = 0.1 * np.random.default_rng(4).normal(size=203)
    out = enhance(model, Waveform(samples))
    assert len(out) == 203
    assert out.meta["enhanced"] is True

    tensor_out = dcrn.enhance_tensor(model, Tensor(samples))
    np.testing.assert_allclose(tensor_out.data, out.samples, atol=1e-9)


def test_batch_forward_matches_single_utterances():
    model = build_dcrn(dcrn_preset("tiny"), seed=5)
    specs = [_spectrogram(6, 9, seed=s) for s in (6, 7)]
    batch = np.stack([np.stack([s.real, s.imag]) for s in specs])
    out = dcrn.dcrn_forward_batch(model, batch)
    for b, spec in enumerate(specs):
        single = dcrn_forward(model, spec)
        np.testing.assert_allclose(out[b, 0], single.real, atol=1e-12)
        np.testing.assert_allclose(out[b, 1], single.imag, atol=1e-12)


def test_enhancement_loss_values():
    s = _spectrogram(3, 9)
    assert dcrn.enhancement_loss(s, s) == 0.0
    shifted = ComplexSpectrogram(s.real + 1.0, s.imag - 1.0)
    assert dcrn.enhancement_loss(shifted, s) == pytest.approx(1.0)
    assert dcrn.enhancement_loss(shifted, s, kind="mse") == pytest.approx(1.0)


def test_spectral_gain_of_identity_is_one():
    s = _spectrogram(3, 9, seed=8)
    np.testing.assert_allclose(dcrn.spectral_gain(s, s), 1.0)


@pytest.mark.parametrize("preset", ["tiny", "toy"])
def test_parameter_count_matches_built_model(preset):
    cfg = dcrn_preset(preset)
    assert dcrn.parameter_count(cfg) == build_dcrn(cfg).parameter_count()


@pytest.mark.parametrize("change", [
    {"layer_specs": TINY_CHAIN[:-1]},
    {"layer_specs": ((2, 9), (4, 4), (4, 2), (4, 4), (3, 9))},
    {"layer_specs": ((2, 9), (4, 4), (8, 1), (4, 2), (2, 9))},
    {"layer_specs": ((2, 9), (4, 4), (4, 2), (8, 1), (4, 2), (6, 4), (2, 9))},
    {"kernel_interior": (2, 3)},
    {"loss": "huber"},
    {"blstm_state": 0},
])
def test_invalid_configs_are_rejected(change):
    with pytest.raises(ConfigError):
        dataclasses.replace(dcrn_preset("tiny"), **change)


def test_chain_must_match_stft_bins():
    with pytest.raises(ConfigError):
        DcrnConfig(TOY_CHAIN)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        dcrn_preset("huge")


@pytest.mark.slow
def test_full_model_forward():
    model = build_dcrn(dcrn_preset("full"))
    assert model.parameter_count() == dcrn.parameter_count(dcrn_preset("full"))
    trace = []
    out = dcrn_forward(model, _spectrogram(3, 257), trace=trace)
    assert trace == list(FULL_CHAIN)
    assert out.real.shape == (3, 257)
