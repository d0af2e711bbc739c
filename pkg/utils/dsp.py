"""
Audio signal processing: STFT analysis/synthesis, log-mel features,
utterance normalization, SNR mixing and WAV I/O.

The numpy functions (``stft``, ``istft``, ``logmel``, ``normalize_utterance``)
serve data preparation and evaluation. The ``*_tensor`` variants compute the
same quantities with differentiable primitives so that an ASR loss can be
back-propagated through the enhancer's waveform output.
"""

import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import librosa
import numpy as np
import soundfile as sf
from scipy.signal import get_window

from models import tensor as T
from models.tensor import Tensor
from utils.error_handler import ConfigError, DataError, ShapeError

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
N_MELS = 80
LOG_FLOOR = 1e-10
VARIANCE_FLOOR = 1e-8
SYNTHESIS_FLOOR = 1e-10


@dataclass
class Waveform:
    """Mono audio at 16 kHz; ``meta`` carries mixing records such as the rescale factor."""
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate != SAMPLE_RATE:
            raise DataError(f"sample rate {self.sample_rate} Hz is not supported (expected {SAMPLE_RATE})")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    frame_ms: float
    shift_ms: float
    fft_size: int
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.frame > self.fft_size:
            raise ConfigError(f"frame of {self.frame} samples exceeds fft_size {self.fft_size}")
        if not 0 < self.shift <= self.frame:
            raise ConfigError(f"shift {self.shift} must be in (0, frame={self.frame}]")
        if self.fft_size % 2:
            raise ConfigError(f"fft_size {self.fft_size} must be even")

    @property
    def frame(self) -> int:
        return int(round(self.frame_ms * SAMPLE_RATE / 1000.0))

    @property
    def shift(self) -> int:
        return int(round(self.shift_ms * SAMPLE_RATE / 1000.0))

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def frames_for(self, length: int) -> int:
        return 1 + (length - self.frame) // self.shift

    def window_array(self) -> np.ndarray:
        return _window(self.window, self.frame)


ENHANCEMENT_STFT = StftConfig(frame_ms=32.0, shift_ms=10.0, fft_size=512)
ASR_STFT = StftConfig(frame_ms=16.0, shift_ms=10.0, fft_size=256)


@lru_cache(maxsize=None)
def _window(name: str, frame: int) -> np.ndarray:
    if name == "sqrt_hann":
        return np.sqrt(get_window("hann", frame, fftbins=True))
    if name in ("rect", "boxcar"):
        return np.ones(frame)
    try:
        return get_window(name, frame, fftbins=True)
    except ValueError as exc:
        raise ConfigError(f"unknown analysis window '{name}'") from exc


@dataclass
class ComplexSpectrogram:
    """T x F complex grid stored as real and imaginary planes."""
    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float64)
        self.imag = np.asarray(self.imag, dtype=np.float64)
        if self.real.shape != self.imag.shape or self.real.ndim != 2:
            raise ShapeError(f"spectrogram planes {self.real.shape} and {self.imag.shape} do not conform")

    @property
    def frames(self) -> int:
        return self.real.shape[0]

    @property
    def bins(self) -> int:
        return self.real.shape[1]

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @classmethod
    def from_complex(cls, values: np.ndarray) -> "ComplexSpectrogram":
        return cls(values.real.copy(), values.imag.copy())


@dataclass
class FeatureMatrix:
    """frames x dims acoustic features."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got {self.values.shape}")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# analysis / synthesis

def _check_length(length: int, cfg: StftConfig):
    if length < cfg.frame:
        raise DataError(f"waveform of {length} samples is shorter than one frame ({cfg.frame})")


def stft(w: Waveform, cfg: StftConfig = ENHANCEMENT_STFT) -> ComplexSpectrogram:
    """Windowed real FFT of frames at 1 + floor((len - frame)/shift) positions."""
    _check_length(len(w), cfg)
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, cfg.frame)[::cfg.shift]
    spectrum = np.fft.rfft(frames * cfg.window_array(), n=cfg.fft_size, axis=1)
    return ComplexSpectrogram.from_complex(spectrum)


def synthesis_normalizer(cfg: StftConfig, frames: int) -> np.ndarray:
    """Reciprocal of the overlapped squared window, zero where it vanishes."""
    length = (frames - 1) * cfg.shift + cfg.frame
    window_sq = cfg.window_array() ** 2
    index = np.arange(frames)[:, None] * cfg.shift + np.arange(cfg.frame)[None, :]
    norm = np.zeros(length)
    np.add.at(norm, index, np.broadcast_to(window_sq, index.shape))
    inverse = np.zeros(length)
    ok = norm > SYNTHESIS_FLOOR
    inverse[ok] = 1.0 / norm[ok]
    return inverse


def istft(spec: ComplexSpectrogram, cfg: StftConfig = ENHANCEMENT_STFT) -> Waveform:
    """Weighted overlap-add with synthesis-window normalization."""
    if spec.bins != cfg.bins:
        raise ShapeError(f"istft: spectrogram has {spec.bins} bins, config expects {cfg.bins}")
    frames = np.fft.irfft(spec.to_complex(), n=cfg.fft_size, axis=1)[:, :cfg.frame]
    frames = frames * cfg.window_array()
    length = (spec.frames - 1) * cfg.shift + cfg.frame
    index = np.arange(spec.frames)[:, None] * cfg.shift + np.arange(cfg.frame)[None, :]
    out = np.zeros(length)
    np.add.at(out, index, frames)
    return Waveform(out * synthesis_normalizer(cfg, spec.frames))


@lru_cache(maxsize=None)
def _analysis_matrices(frame: int, fft_size: int) -> Tuple[np.ndarray, np.ndarray]:
    n = np.arange(frame)[:, None]
    k = np.arange(fft_size // 2 + 1)[None, :]
    angle = 2.0 * np.pi * n * k / fft_size
    return np.cos(angle), -np.sin(angle)


@lru_cache(maxsize=None)
def _synthesis_matrices(frame: int, fft_size: int) -> Tuple[np.ndarray, np.ndarray]:
    bins = fft_size // 2 + 1
    weight = np.full(bins, 2.0)
    weight[0] = 1.0
    weight[-1] = 1.0
    k = np.arange(bins)[:, None]
    n = np.arange(frame)[None, :]
    angle = 2.0 * np.pi * k * n / fft_size
    scale = weight[:, None] / fft_size
    return scale * np.cos(angle), -scale * np.sin(angle)


def stft_tensor(x: Tensor, cfg: StftConfig) -> Tuple[Tensor, Tensor]:
    """Differentiable STFT of a 1-D tensor; returns (real, imag) planes."""
    _check_length(x.shape[0], cfg)
    frames = T.frame_signal(x, cfg.frame, cfg.shift)
    frames = frames * T.expand(Tensor(cfg.window_array()[None, :]), frames.shape)
    cos_m, sin_m = _analysis_matrices(cfg.frame, cfg.fft_size)
    return T.matmul(frames, Tensor(cos_m)), T.matmul(frames, Tensor(sin_m))


def istft_tensor(real: Tensor, imag: Tensor, cfg: StftConfig) -> Tensor:
    """Differentiable counterpart of ``istft``."""
    if real.shape != imag.shape or real.ndim != 2 or real.shape[1] != cfg.bins:
        raise ShapeError(f"istft: planes {real.shape}/{imag.shape} do not match {cfg.bins} bins")
    cos_m, sin_m = _synthesis_matrices(cfg.frame, cfg.fft_size)
    frames = T.matmul(real, Tensor(cos_m)) + T.matmul(imag, Tensor(sin_m))
    frames = frames * T.expand(Tensor(cfg.window_array()[None, :]), frames.shape)
    n_frames = real.shape[0]
    length = (n_frames - 1) * cfg.shift + cfg.frame
    signal = T.overlap_add(frames, cfg.shift, length)
    return signal * Tensor(synthesis_normalizer(cfg, n_frames))


# ---------------------------------------------------------------------------
# features

@lru_cache(maxsize=None)
def mel_filterbank(n_fft: int = ASR_STFT.fft_size, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular mel filters (n_mels x bins) spanning 0 Hz to Nyquist, peak 1."""
    # Low filters are narrower than one FFT bin at 256 points and stay empty.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        bank = librosa.filters.mel(sr=SAMPLE_RATE, n_fft=n_fft, n_mels=n_mels, fmin=0.0,
                                   fmax=SAMPLE_RATE / 2, htk=True, norm=None)
    return bank.astype(np.float64)


def mel_center_frequencies(n_mels: int = N_MELS) -> np.ndarray:
    return librosa.mel_frequencies(n_mels=n_mels + 2, fmin=0.0, fmax=SAMPLE_RATE / 2, htk=True)[1:-1]


def logmel(w: Waveform, cfg: StftConfig = ASR_STFT, n_mels: int = N_MELS) -> FeatureMatrix:
    """80-dim log mel energies: log(mel power + 1e-10)."""
    spec = stft(w, cfg)
    power = spec.real ** 2 + spec.imag ** 2
    return FeatureMatrix(np.log(power @ mel_filterbank(cfg.fft_size, n_mels).T + LOG_FLOOR))


def logmel_tensor(x: Tensor, cfg: StftConfig = ASR_STFT, n_mels: int = N_MELS) -> Tensor:
    real, imag = stft_tensor(x, cfg)
    power = real * real + imag * imag
    mel = T.matmul(power, Tensor(mel_filterbank(cfg.fft_size, n_mels).T))
    return T.log(mel + LOG_FLOOR)


def normalize_utterance(f: FeatureMatrix) -> FeatureMatrix:
    """Per-coefficient zero mean and unit variance across frames."""
    if f.frames < 2:
        raise DataError(f"normalization needs at least 2 frames, got {f.frames}")
    centered = f.values - f.values.mean(axis=0, keepdims=True)
    var = np.maximum((centered ** 2).mean(axis=0, keepdims=True), VARIANCE_FLOOR)
    return FeatureMatrix(centered / np.sqrt(var))


def normalize_tensor(f: Tensor) -> Tensor:
    if f.ndim != 2 or f.shape[0] < 2:
        raise DataError(f"normalization needs a (frames >= 2, dims) matrix, got {f.shape}")
    mu = T.expand(f.mean(axis=0, keepdims=True), f.shape)
    centered = f - mu
    var = T.clamp_min((centered * centered).mean(axis=0, keepdims=True), VARIANCE_FLOOR)
    return centered * T.expand(T.power(var, -0.5), f.shape)


# ---------------------------------------------------------------------------
# mixing

def fit_length(n: np.ndarray, length: int) -> np.ndarray:
    """Crop, or loop then crop, a noise signal to ``length`` samples."""
    if n.shape[0] >= length:
        return n[:length]
    reps = int(np.ceil(length / n.shape[0]))
    return np.tile(n, reps)[:length]


def active_power(samples: np.ndarray) -> float:
    """Mean power over the span between the first and last nonzero sample."""
    nonzero = np.flatnonzero(samples)
    if nonzero.size == 0:
        return 0.0
    span = samples[nonzero[0]:nonzero[-1] + 1]
    return float(np.mean(span ** 2))


def mix_at_snr(s: Waveform, n: Waveform, snr_db: float) -> Waveform:
    """
    Add noise scaled to a target SNR.

    The result's ``meta`` records ``snr_db``, ``noise_scale`` (applied to n)
    and ``rescale`` (peak normalization applied afterwards, 1.0 if none).
    """
    if len(n) == 0:
        raise DataError("noise waveform is empty")
    noise = fit_length(n.samples, len(s))
    p_s = active_power(s.samples)
    p_n = float(np.mean(noise ** 2))
    if p_s == 0.0 or p_n == 0.0:
        raise DataError("cannot mix at an SNR with a silent speech or noise signal")
    noise_scale = float(np.sqrt(p_s / (p_n * 10.0 ** (snr_db / 10.0))))
    mixture = s.samples + noise_scale * noise
    peak = float(np.max(np.abs(mixture)))
    rescale = 1.0 / peak if peak > 1.0 else 1.0
    return Waveform(mixture * rescale, meta={
        "snr_db": float(snr_db),
        "noise_scale": noise_scale,
        "rescale": rescale,
    })


def measured_snr(s: np.ndarray, noise_component: np.ndarray) -> float:
    return float(10.0 * np.log10(active_power(s) / np.mean(noise_component ** 2)))


# ---------------------------------------------------------------------------
# WAV I/O

def quantize(samples: np.ndarray) -> np.ndarray:
    """16-bit PCM integer codes for samples in [-1, 1]."""
    return np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)


def write_wav(path: Union[str, Path], w: Waveform) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), quantize(w.samples), w.sample_rate, subtype="PCM_16")
    return path


def read_wav(path: Union[str, Path]) -> Waveform:
    path = Path(path)
    if not path.exists():
        raise DataError(f"audio file not found: {path}")
    samples, rate = sf.read(str(path), dtype="float64", always_2d=False)
    if samples.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {samples.shape[1]} channels")
    if rate != SAMPLE_RATE:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE}")
    return Waveform(samples)
