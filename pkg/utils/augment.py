"""
On-the-fly data augmentation: per-batch noise/enhancement decisions and
SpecAugment-style time and frequency masking.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.tensor import Tensor
from utils.dsp import FeatureMatrix, Waveform, fit_length, mix_at_snr
from utils.error_handler import ConfigError, DataError

logger = logging.getLogger(__name__)


def _check_probability(name: str, value: float):
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def _check_range(name: str, bounds: Tuple[float, float]):
    if len(bounds) != 2 or bounds[0] > bounds[1]:
        raise ConfigError(f"{name} must be an ordered (low, high) pair, got {bounds}")


@dataclass(frozen=True)
class AugmentPolicy:
    noise_prob: float = 0.5
    noise_snr_range: Tuple[float, float] = (0.0, 25.0)
    enhance_prob: float = 0.5
    enh_train_snr_range: Tuple[float, float] = (-5.0, 5.0)

    def __post_init__(self):
        _check_probability("noise_prob", self.noise_prob)
        _check_probability("enhance_prob", self.enhance_prob)
        _check_range("noise_snr_range", tuple(self.noise_snr_range))
        _check_range("enh_train_snr_range", tuple(self.enh_train_snr_range))


@dataclass(frozen=True)
class SpecAugmentConfig:
    freq_masks: int = 2
    freq_width_max: int = 15
    time_masks: int = 2
    time_width_max: int = 20
    mask_value: float = 0.0

    def __post_init__(self):
        if min(self.freq_masks, self.freq_width_max, self.time_masks, self.time_width_max) < 0:
            raise ConfigError("SpecAugment counts and widths must be non-negative")

    @property
    def enabled(self) -> bool:
        return (self.freq_masks > 0 and self.freq_width_max > 0) or (self.time_masks > 0 and self.time_width_max > 0)


@dataclass
class BatchPlan:
    """Transforms applied to one batch; logged per batch."""
    noise: bool
    enhance: bool
    snr_db: List[float] = field(default_factory=list)
    pair_id: str = ""

    def as_row(self) -> dict:
        return {
            "noise": int(self.noise),
            "enhance": int(self.enhance),
            "snr_db": " ".join(f"{v:.2f}" for v in self.snr_db),
            "pair_id": self.pair_id,
        }


def draw_batch_plan(policy: AugmentPolicy, rng: np.random.Generator, batch_size: int,
                    use_noise: bool = True, use_enhance: bool = False) -> BatchPlan:
    """One coin per batch for noise and one for enhancement; an SNR per utterance when noise applies."""
    noise = use_noise and bool(rng.random() < policy.noise_prob)
    enhance = use_enhance and bool(rng.random() < policy.enhance_prob)
    snrs = [float(v) for v in rng.uniform(*policy.noise_snr_range, size=batch_size)] if noise else []
    return BatchPlan(noise=noise, enhance=enhance, snr_db=snrs)


def noise_segment(noises: Sequence[Waveform], length: int, rng: np.random.Generator) -> Waveform:
    """A random excerpt of a random noise recording, looped if shorter than ``length``."""
    if not noises:
        raise DataError("no noise recordings available for augmentation")
    noise = noises[int(rng.integers(len(noises)))]
    offset = int(rng.integers(0, len(noise)))
    return Waveform(fit_length(np.roll(noise.samples, -offset), length))


def _mask_bands(keep: np.ndarray, axis: int, count: int, width_max: int, rng: np.random.Generator):
    size = keep.shape[axis]
    if width_max < 1 or size < 1:
        return
    for _ in range(count):
        width = int(rng.integers(1, min(width_max, size) + 1))
        start = int(rng.integers(0, size - width + 1))
        if axis == 0:
            keep[start:start + width, :] = False
        else:
            keep[:, start:start + width] = False


def spec_augment_mask(shape: Tuple[int, int], cfg: SpecAugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Boolean keep-mask of a (frames, dims) matrix: frequency bands first, then time bands."""
    frames, dims = shape
    if cfg.freq_masks and cfg.freq_width_max > dims:
        raise ConfigError(f"freq_width_max {cfg.freq_width_max} exceeds {dims} feature dims")
    keep = np.ones(shape, dtype=bool)
    _mask_bands(keep, 1, cfg.freq_masks, cfg.freq_width_max, rng)
    _mask_bands(keep, 0, cfg.time_masks, cfg.time_width_max, rng)
    return keep


def spec_augment(f: FeatureMatrix, cfg: SpecAugmentConfig, rng: np.random.Generator) -> FeatureMatrix:
    keep = spec_augment_mask(f.values.shape, cfg, rng)
    return FeatureMatrix(np.where(keep, f.values, cfg.mask_value))


def spec_augment_tensor(x: Tensor, cfg: SpecAugmentConfig, rng: np.random.Generator) -> Tensor:
    """Same masking on a differentiable feature tensor; masked cells pass no gradient."""
    keep = spec_augment_mask(x.shape, cfg, rng).astype(np.float64)
    masked = x * Tensor(keep)
    if cfg.mask_value != 0.0:
        masked = masked + Tensor((1.0 - keep) * cfg.mask_value)
    return masked


def worker_rng(root_seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent stream for one (epoch, item) pair, stable across worker counts."""
    return np.random.default_rng(np.random.SeedSequence([root_seed, epoch, index]))


def enhancement_training_pair(clean: Waveform, noises: Sequence[Waveform], policy: AugmentPolicy,
                              rng: np.random.Generator) -> Tuple[Waveform, Waveform, float]:
    """(noisy, scaled clean target, snr) at an SNR drawn from the enhancer training range."""
    snr = float(rng.uniform(*policy.enh_train_snr_range))
    noisy = mix_at_snr(clean, noise_segment(noises, len(clean), rng), snr)
    return noisy, Waveform(clean.samples * noisy.meta["rescale"]), snr
