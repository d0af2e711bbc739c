"""
Dense convolutional recurrent network for complex spectral mapping.

The network maps a noisy spectrogram, real and imaginary planes stacked as two
channels, to an estimate of the clean spectrogram. It is a frequency-axis UNet:

* encoder stages are convolutions with stride 2 along frequency,
* two BLSTM layers run over time at the bottleneck,
* decoder stages concatenate the mirror encoder output (skip connection),
  convolve to twice the target channels and rearrange channel pairs into
  adjacent frequency bins (sub-pixel upsampling),
* dense blocks follow the innermost encoder and decoder stages.

The stage chain is described by ``DcrnConfig.layer_specs`` as
(channels, frequency bins) pairs: input, encoder outputs, decoder outputs.
Paddings are derived from the chain, so ``plan_stages`` and ``shape_plan``
work without allocating any parameters.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models import tensor as T
from models.layers import BLSTM, Linear, Module, uniform_init
from models.tensor import Tensor
from utils.dsp import (
    ComplexSpectrogram,
    ENHANCEMENT_STFT,
    StftConfig,
    Waveform,
    istft,
    istft_tensor,
    stft,
    stft_tensor,
)
from utils.error_handler import ConfigError, ShapeError

logger = logging.getLogger(__name__)

Kernel = Tuple[int, int]
Padding = Tuple[Tuple[int, int], Tuple[int, int]]

LOSS_KINDS = ("mae", "mse")


@dataclass(frozen=True)
class DcrnConfig:
    """Stage chain and layer sizes of the enhancement network."""
    layer_specs: Tuple[Tuple[int, int], ...]
    blstm_state: int = 512
    dense_depth: int = 5
    dense_blocks: int = 5
    kernel_interior: Kernel = (3, 3)
    kernel_boundary: Kernel = (5, 5)
    stft: StftConfig = field(default=ENHANCEMENT_STFT)
    loss: str = "mae"

    def __post_init__(self):
        specs = tuple(tuple(int(v) for v in spec) for spec in self.layer_specs)
        object.__setattr__(self, "layer_specs", specs)
        object.__setattr__(self, "kernel_interior", tuple(self.kernel_interior))
        object.__setattr__(self, "kernel_boundary", tuple(self.kernel_boundary))

        if len(specs) < 5 or len(specs) % 2 == 0:
            raise ConfigError(f"layer_specs needs an odd number (>= 5) of stages, got {len(specs)}")
        if any(len(spec) != 2 or min(spec) < 1 for spec in specs):
            raise ConfigError("every layer spec must be a positive (channels, freq_bins) pair")
        if specs[0][0] != 2 or specs[-1][0] != 2:
            raise ConfigError("input and output stages must have 2 channels (real, imaginary)")
        n = self.stages
        for i in range(len(specs)):
            if specs[i][1] != specs[-1 - i][1]:
                raise ConfigError(
                    f"frequency chain is not mirror-symmetric: stage {i} has {specs[i][1]} bins, "
                    f"stage {len(specs) - 1 - i} has {specs[-1 - i][1]}")
        for j in range(1, n):
            if specs[n + j][0] != specs[n - j][0]:
                raise ConfigError(
                    f"decoder stage {j} has {specs[n + j][0]} channels, "
                    f"its mirror encoder stage has {specs[n - j][0]}")
        if self.stft.bins != specs[0][1]:
            raise ConfigError(f"STFT yields {self.stft.bins} bins, chain expects {specs[0][1]}")
        if self.blstm_state < 1 or self.dense_depth < 0 or self.dense_blocks < 0:
            raise ConfigError("blstm_state must be positive; dense_depth and dense_blocks non-negative")
        if any(k % 2 == 0 for k in self.kernel_interior + self.kernel_boundary):
            raise ConfigError("kernel sizes must be odd")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown enhancement loss '{self.loss}' (choose from {LOSS_KINDS})")

    @property
    def stages(self) -> int:
        """Number of encoder stages (equal to the number of decoder stages)."""
        return (len(self.layer_specs) - 1) // 2

    @property
    def input_bins(self) -> int:
        return self.layer_specs[0][1]

    def parameter_count(self) -> int:
        return parameter_count(self)


FULL_CHAIN = (
    (2, 257), (32, 128), (32, 64), (32, 32), (32, 16), (64, 8), (128, 4), (256, 2), (512, 1),
    (256, 2), (128, 4), (64, 8), (32, 16), (32, 32), (32, 64), (32, 128), (2, 257),
)
TOY_CHAIN = (
    (2, 33), (8, 16), (16, 8), (32, 4), (64, 2), (128, 1),
    (64, 2), (32, 4), (16, 8), (8, 16), (2, 33),
)
TINY_CHAIN = ((2, 9), (4, 4), (4, 2), (8, 1), (4, 2), (4, 4), (2, 9))

TOY_STFT = StftConfig(frame_ms=4.0, shift_ms=2.0, fft_size=64)
TINY_STFT = StftConfig(frame_ms=1.0, shift_ms=0.5, fft_size=16)

DCRN_PRESETS: Dict[str, DcrnConfig] = {
    "full": DcrnConfig(FULL_CHAIN, blstm_state=512, dense_depth=5, dense_blocks=5),
    "toy": DcrnConfig(TOY_CHAIN, blstm_state=32, dense_depth=2, dense_blocks=5, stft=TOY_STFT),
    "tiny": DcrnConfig(TINY_CHAIN, blstm_state=3, dense_depth=2, dense_blocks=2, stft=TINY_STFT),
}


def dcrn_preset(name: str) -> DcrnConfig:
    try:
        return DCRN_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown DCRN preset '{name}' (choose from {sorted(DCRN_PRESETS)})") from None


# ---------------------------------------------------------------------------
# layer plan

@dataclass(frozen=True)
class ConvPlan:
    in_channels: int
    out_channels: int
    kernel: Kernel
    stride: Kernel
    padding: Padding

    def count(self) -> int:
        kh, kw = self.kernel
        return self.out_channels * self.in_channels * kh * kw + self.out_channels


@dataclass(frozen=True)
class StagePlan:
    """One encoder or decoder stage: its conv, optional dense block and output shape."""
    name: str
    conv: ConvPlan
    output: Tuple[int, int]
    dense: bool = False
    shuffle: bool = False
    head: Optional[ConvPlan] = None


def strided_padding(in_bins: int, out_bins: int, kernel: int) -> Tuple[int, int]:
    """Smallest total padding P with floor((F_in + P - k)/2) + 1 == F_out, split (P//2, P - P//2)."""
    for total in range(0, 2 * kernel + 2):
        if in_bins + total >= kernel and (in_bins + total - kernel) // 2 + 1 == out_bins:
            return total // 2, total - total // 2
    raise ConfigError(
        f"frequency chain {in_bins} -> {out_bins} is not power-of-2 compatible "
        f"with a stride-2 kernel of {kernel}")


def _same(kernel: Kernel) -> Padding:
    kt, kf = kernel
    return (kt // 2, kt // 2), (kf // 2, kf // 2)


def _dense_plan(channels: int, depth: int, kernel: Kernel) -> List[ConvPlan]:
    return [ConvPlan(k * channels, channels, kernel, (1, 1), _same(kernel)) for k in range(1, depth + 1)]


def plan_stages(cfg: DcrnConfig) -> List[StagePlan]:
    """Encoder then decoder stages; validates the frequency chain."""
    specs, n = cfg.layer_specs, cfg.stages
    plan: List[StagePlan] = []

    for i in range(1, n + 1):
        kernel = cfg.kernel_boundary if i == 1 else cfg.kernel_interior
        (c_in, f_in), (c_out, f_out) = specs[i - 1], specs[i]
        padding = ((kernel[0] // 2, kernel[0] // 2), strided_padding(f_in, f_out, kernel[1]))
        plan.append(StagePlan(
            name=f"enc{i}",
            conv=ConvPlan(c_in, c_out, kernel, (1, 2), padding),
            output=(c_out, f_out),
            dense=cfg.dense_depth > 0 and i > n - cfg.dense_blocks,
        ))

    inner_dense = min(cfg.dense_blocks, n - 1)
    for j in range(1, n + 1):
        c_prev, f_prev = specs[n + j - 1]
        c_skip, f_skip = specs[n + 1 - j]
        if f_skip != f_prev:
            raise ConfigError(f"dec{j}: skip has {f_skip} bins, decoder input has {f_prev}")
        c_target, f_target = specs[n + j]
        c_in = c_prev + c_skip
        if j < n:
            if f_target != 2 * f_prev:
                raise ConfigError(
                    f"dec{j}: sub-pixel upsampling gives {2 * f_prev} bins, chain expects {f_target}")
            kernel = cfg.kernel_interior
            plan.append(StagePlan(
                name=f"dec{j}",
                conv=ConvPlan(c_in, 2 * c_target, kernel, (1, 1), _same(kernel)),
                output=(c_target, f_target),
                dense=cfg.dense_depth > 0 and j <= inner_dense,
                shuffle=True,
            ))
        else:
            c_mid = specs[1][0]
            head_kernel = cfg.kernel_boundary
            pad_total = f_target - 2 * f_prev + head_kernel[1] - 1
            if pad_total < 0:
                raise ConfigError(f"output stage cannot map {2 * f_prev} bins to {f_target}")
            head_pad = ((head_kernel[0] // 2, head_kernel[0] // 2), (pad_total // 2, pad_total - pad_total // 2))
            plan.append(StagePlan(
                name=f"dec{j}",
                conv=ConvPlan(c_in, 2 * c_mid, cfg.kernel_interior, (1, 1), _same(cfg.kernel_interior)),
                output=(c_target, f_target),
                shuffle=True,
                head=ConvPlan(c_mid, c_target, head_kernel, (1, 1), head_pad),
            ))
    return plan


def shape_plan(cfg: DcrnConfig) -> List[Tuple[int, int]]:
    """(channels, freq_bins) after the input and after every stage."""
    return [cfg.layer_specs[0]] + [stage.output for stage in plan_stages(cfg)]


def parameter_count(cfg: DcrnConfig) -> int:
    total = 0
    for stage in plan_stages(cfg):
        total += stage.conv.count()
        if stage.head is not None:
            total += stage.head.count()
        if stage.dense:
            channels = stage.output[0]
            total += sum(p.count() for p in _dense_plan(channels, cfg.dense_depth, cfg.kernel_interior))
    bottleneck = cfg.layer_specs[cfg.stages][0] * cfg.layer_specs[cfg.stages][1]
    hidden = cfg.blstm_state
    total += BLSTM.count(bottleneck, hidden) + BLSTM.count(2 * hidden, hidden) + Linear.count(2 * hidden, bottleneck)
    return total


# ---------------------------------------------------------------------------
# modules

class Conv2d(Module):
    def __init__(self, plan: ConvPlan, rng: np.random.Generator):
        super().__init__()
        self.plan = plan
        kh, kw = plan.kernel
        fan_in = plan.in_channels * kh * kw
        self.weight = self.add_parameter(
            "weight", uniform_init(rng, (plan.out_channels, plan.in_channels, kh, kw), fan_in))
        self.bias = self.add_parameter("bias", uniform_init(rng, (plan.out_channels,), fan_in))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.plan.stride, padding=self.plan.padding)


class DenseBlock(Module):
    """Densely connected conv layers; layer k sees the block input and all k-1 earlier outputs."""

    def __init__(self, channels: int, depth: int, kernel: Kernel, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.layers = [self.add_module(f"layer{k}", Conv2d(plan, rng))
                       for k, plan in enumerate(_dense_plan(channels, depth, kernel), start=1)]

    def __call__(self, x: Tensor) -> Tensor:
        return dense_block_forward(self, x)


def dense_block_forward(block: DenseBlock, x: Tensor) -> Tensor:
    if x.ndim != 3 or x.shape[0] != block.channels:
        raise ShapeError(f"dense block expects {block.channels} input channels, got shape {x.shape}")
    if not block.layers:
        return x
    features = [x]
    out = x
    for layer in block.layers:
        inputs = features[0] if len(features) == 1 else T.concat(features, axis=0)
        out = T.elu(layer(inputs))
        features.append(out)
    return out


def subpixel_upsample(x: Tensor) -> Tensor:
    """(2C, T, F) -> (C, T, 2F); channel pairs become adjacent frequency bins."""
    if x.ndim != 3 or x.shape[0] % 2:
        raise ShapeError(f"sub-pixel upsampling needs an even channel count, got shape {x.shape}")
    return T.pixel_shuffle_freq(x, 2)


class EnhancementModel(Module):
    """Parameters and forward pass of one DCRN."""

    def __init__(self, config: DcrnConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.plan = plan_stages(config)
        self.convs: Dict[str, Conv2d] = {}
        self.dense: Dict[str, DenseBlock] = {}
        self.heads: Dict[str, Conv2d] = {}
        n = config.stages

        for stage in self.plan[:n]:
            self._add_stage(stage, rng)

        bins = config.layer_specs[n]
        self.bottleneck_shape = bins
        width = bins[0] * bins[1]
        hidden = config.blstm_state
        self.blstm1 = self.add_module("blstm1", BLSTM(width, hidden, rng))
        self.blstm2 = self.add_module("blstm2", BLSTM(2 * hidden, hidden, rng))
        self.projection = self.add_module("projection", Linear(2 * hidden, width, rng))

        for stage in self.plan[n:]:
            self._add_stage(stage, rng)

    def _add_stage(self, stage: StagePlan, rng: np.random.Generator):
        self.convs[stage.name] = self.add_module(stage.name, Conv2d(stage.conv, rng))
        if stage.dense:
            self.dense[stage.name] = self.add_module(
                f"{stage.name}_dense",
                DenseBlock(stage.output[0], self.config.dense_depth, self.config.kernel_interior, rng))
        if stage.head is not None:
            self.heads[stage.name] = self.add_module("output", Conv2d(stage.head, rng))

    def _bottleneck(self, x: Tensor) -> Tensor:
        channels, bins = self.bottleneck_shape
        frames = x.shape[1]
        seq = T.transpose(x, (1, 0, 2)).reshape(frames, channels * bins)
        seq = self.blstm2(self.blstm1(seq))
        seq = self.projection(seq)
        return T.transpose(seq.reshape(frames, channels, bins), (1, 0, 2))

    def forward(self, x: Tensor, trace: Optional[List[Tuple[int, int]]] = None) -> Tensor:
        """Map a (2, T, F) tensor to (2, T, F); ``trace`` collects (C, F) per stage."""
        if x.ndim != 3 or x.shape[0] != 2 or x.shape[2] != self.config.input_bins:
            raise ShapeError(f"dcrn: expected input (2, T, {self.config.input_bins}), got {x.shape}")
        if trace is not None:
            trace.append((x.shape[0], x.shape[2]))
        n = self.config.stages
        skips: List[Tensor] = []
        for stage in self.plan[:n]:
            x = T.elu(self.convs[stage.name](x))
            if stage.dense:
                x = self.dense[stage.name](x)
            skips.append(x)
            if trace is not None:
                trace.append((x.shape[0], x.shape[2]))

        x = self._bottleneck(x)

        for j, stage in enumerate(self.plan[n:], start=1):
            skip = skips[n - j]
            x = T.concat([x, skip], axis=0)
            if x.shape[0] != stage.conv.in_channels:
                raise ShapeError(f"{stage.name}: {x.shape[0]} channels after skip concat, "
                                 f"expected {stage.conv.in_channels}")
            x = subpixel_upsample(T.elu(self.convs[stage.name](x)))
            if stage.head is not None:
                x = self.heads[stage.name](x)
            elif stage.dense:
                x = self.dense[stage.name](x)
            if trace is not None:
                trace.append((x.shape[0], x.shape[2]))
        return x

    __call__ = forward


def build_dcrn(cfg: DcrnConfig, seed: int = 0) -> EnhancementModel:
    model = EnhancementModel(cfg, np.random.default_rng(seed))
    logger.info("Built DCRN: %d stages, %d parameters", cfg.stages, model.parameter_count())
    return model


# ---------------------------------------------------------------------------
# spectrogram and waveform entry points

def dcrn_forward_tensor(m: EnhancementModel, real: Tensor, imag: Tensor) -> Tuple[Tensor, Tensor]:
    out = m(T.stack([real, imag], axis=0))
    re, im = T.unbind(out, axis=0)
    return re, im


def dcrn_forward(m: EnhancementModel, X: ComplexSpectrogram,
                 trace: Optional[List[Tuple[int, int]]] = None) -> ComplexSpectrogram:
    """Enhanced spectrogram with the same frames and bins as ``X``."""
    if X.bins != m.config.input_bins:
        raise ShapeError(f"dcrn: spectrogram has {X.bins} bins, model expects {m.config.input_bins}")
    with T.no_grad():
        out = m(Tensor(np.stack([X.real, X.imag])), trace=trace)
    return ComplexSpectrogram(out.data[0], out.data[1])


def dcrn_forward_batch(m: EnhancementModel, batch: np.ndarray) -> np.ndarray:
    """(B, 2, T, F) -> (B, 2, T, F), one utterance at a time."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1] != 2:
        raise ShapeError(f"dcrn: expected a (batch, 2, T, F) array, got {batch.shape}")
    out = np.empty_like(batch)
    for b in range(batch.shape[0]):
        spec = dcrn_forward(m, ComplexSpectrogram(batch[b, 0], batch[b, 1]))
        out[b, 0], out[b, 1] = spec.real, spec.imag
    return out


def _enhance_padding(length: int, cfg: StftConfig) -> Tuple[int, int]:
    edge = cfg.frame - cfg.shift
    padded = length + 2 * edge
    if padded < cfg.frame:
        edge += cfg.frame - padded
        padded = length + 2 * edge
    tail = (-(padded - cfg.frame)) % cfg.shift
    return edge, edge + tail


def enhance(m: EnhancementModel, x: Waveform) -> Waveform:
    """stft -> dcrn_forward -> istft; the output has the input's length."""
    cfg = m.config.stft
    left, right = _enhance_padding(len(x), cfg)
    padded = Waveform(np.pad(x.samples, (left, right)))
    out = istft(dcrn_forward(m, stft(padded, cfg)), cfg)
    meta = dict(x.meta)
    meta["enhanced"] = True
    return Waveform(out.samples[left:left + len(x)], meta=meta)


def enhance_tensor(m: EnhancementModel, x: Tensor) -> Tensor:
    """Differentiable ``enhance`` of a 1-D tensor."""
    cfg = m.config.stft
    length = x.shape[0]
    left, right = _enhance_padding(length, cfg)
    real, imag = stft_tensor(T.pad(x, ((left, right),)), cfg)
    real, imag = dcrn_forward_tensor(m, real, imag)
    return istft_tensor(real, imag, cfg)[left:left + length]


def spectral_gain(X: ComplexSpectrogram, S_hat: ComplexSpectrogram, floor: float = 1e-8) -> np.ndarray:
    """Magnitude ratio |S_hat| / |X| per time-frequency cell (the implied mask)."""
    if X.real.shape != S_hat.real.shape:
        raise ShapeError(f"gain: shapes {X.real.shape} and {S_hat.real.shape} do not conform")
    return np.abs(S_hat.to_complex()) / np.maximum(np.abs(X.to_complex()), floor)


def enhancement_loss(S_hat: ComplexSpectrogram, S: ComplexSpectrogram, kind: str = "mae") -> float:
    """Mean absolute (or squared) error over real and imaginary planes."""
    if S_hat.real.shape != S.real.shape:
        raise ShapeError(f"enhancement loss: shapes {S_hat.real.shape} and {S.real.shape} do not conform")
    diff = np.concatenate([S_hat.real - S.real, S_hat.imag - S.imag])
    if kind == "mse":
        return float(np.mean(diff ** 2))
    return float(np.mean(np.abs(diff)))


def enhancement_loss_tensor(real_hat: Tensor, imag_hat: Tensor, real: np.ndarray, imag: np.ndarray,
                            kind: str = "mae") -> Tensor:
    if real_hat.shape != np.shape(real) or imag_hat.shape != np.shape(imag):
        raise ShapeError(f"enhancement loss: shapes {real_hat.shape} and {np.shape(real)} do not conform")
    diff = T.concat([real_hat - Tensor(real), imag_hat - Tensor(imag)], axis=0)
    if kind == "mse":
        return (diff * diff).mean()
    return T.abs_(diff).mean()


def describe_chain(chain: Sequence[Tuple[int, int]]) -> str:
    return " -> ".join(f"({c},{f})" for c, f in chain)
