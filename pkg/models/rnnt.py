"""
RNN-Transducer acoustic model, transducer loss and greedy decoding.

The encoder is a BLSTM stack over log-mel frames with 2x frame dropping after
selected layers; the prediction network is an LSTM stack over embedded labels
starting from the blank symbol; the joint network adds linear projections of
both, applies tanh and projects to the output vocabulary (blank included).

``rnnt_loss`` is a single autodiff node: the forward pass runs the alpha/beta
recursions in log space and the backward pass returns the exact gradient with
respect to the joint logits from the alignment posteriors.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax

from models import tensor as T
from models.layers import BLSTM, LSTM, Linear, Module, uniform_init
from models.tensor import Function, Tensor
from utils.dsp import FeatureMatrix, N_MELS
from utils.error_handler import ConfigError, DataError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

BLANK_ID = 0
BLANK_SYMBOL = "<blank>"


@dataclass
class Vocabulary:
    """Output symbols; index 0 is the blank, symbol k is index k + 1."""
    labels: List[str]
    blank_id: int = BLANK_ID

    def __post_init__(self):
        if self.blank_id != BLANK_ID:
            raise ConfigError("the blank symbol must have index 0")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("vocabulary contains duplicate symbols")
        if any(not label or label.isspace() or " " in label for label in self.labels):
            raise ConfigError("vocabulary symbols must be non-empty and contain no spaces")
        self._index = {label: k + 1 for k, label in enumerate(self.labels)}

    @property
    def size(self) -> int:
        """|Y| + 1 (blank included)."""
        return len(self.labels) + 1

    def encode(self, transcript: str) -> List[int]:
        ids = []
        for symbol in transcript.split():
            if symbol not in self._index:
                raise DataError(f"symbol '{symbol}' is not in the vocabulary")
            ids.append(self._index[symbol])
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.labels[i - 1] for i in ids if i != self.blank_id)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(f"{label}\n" for label in self.labels), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise DataError(f"vocabulary file not found: {path}")
        labels = [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        if not labels:
            raise DataError(f"{path}: vocabulary is empty")
        return cls(labels)


@dataclass(frozen=True)
class RnntConfig:
    input_dim: int = N_MELS
    vocab_size: int = 256
    encoder_layers: int = 5
    encoder_hidden: int = 800
    decoder_layers: int = 2
    decoder_hidden: int = 160
    embed_dim: int = 160
    joint_hidden: int = 1024
    subsample_after: Tuple[int, ...] = (1, 2)

    def __post_init__(self):
        object.__setattr__(self, "subsample_after", tuple(int(i) for i in self.subsample_after))
        sizes = (self.input_dim, self.vocab_size, self.encoder_layers, self.encoder_hidden,
                 self.decoder_layers, self.decoder_hidden, self.embed_dim, self.joint_hidden)
        if min(sizes) < 1:
            raise ConfigError(f"RNN-T sizes must be positive: {self}")
        if self.vocab_size < 2:
            raise ConfigError("vocabulary needs at least one symbol besides blank")
        if any(not 1 <= i <= self.encoder_layers for i in self.subsample_after):
            raise ConfigError(f"subsample_after {self.subsample_after} outside 1..{self.encoder_layers}")

    @property
    def min_frames(self) -> int:
        return 2 ** len(self.subsample_after)

    def with_vocab(self, vocab_size: int) -> "RnntConfig":
        return replace(self, vocab_size=vocab_size)

    def parameter_count(self) -> int:
        h, hd = self.encoder_hidden, self.decoder_hidden
        encoder = BLSTM.count(self.input_dim, h) + (self.encoder_layers - 1) * BLSTM.count(2 * h, h)
        decoder = LSTM.count(self.embed_dim, hd) + (self.decoder_layers - 1) * LSTM.count(hd, hd)
        joint = (Linear.count(2 * h, self.joint_hidden) + Linear.count(hd, self.joint_hidden)
                 + Linear.count(self.joint_hidden, self.vocab_size))
        return encoder + self.vocab_size * self.embed_dim + decoder + joint


RNNT_PRESETS: Dict[str, RnntConfig] = {
    "full": RnntConfig(),
    "full_large": RnntConfig(encoder_layers=6),
    "toy": RnntConfig(vocab_size=16, encoder_layers=2, encoder_hidden=64, decoder_layers=1,
                      decoder_hidden=32, embed_dim=16, joint_hidden=64),
    "tiny": RnntConfig(input_dim=4, vocab_size=3, encoder_layers=2, encoder_hidden=3, decoder_layers=1,
                       decoder_hidden=3, embed_dim=2, joint_hidden=4),
}


def rnnt_preset(name: str) -> RnntConfig:
    try:
        return RNNT_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown RNN-T preset '{name}' (choose from {sorted(RNNT_PRESETS)})") from None


class RnntModel(Module):
    def __init__(self, config: RnntConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        h = config.encoder_hidden
        self.encoder = []
        for layer in range(config.encoder_layers):
            width = config.input_dim if layer == 0 else 2 * h
            self.encoder.append(self.add_module(f"encoder{layer + 1}", BLSTM(width, h, rng)))
        self.embedding = self.add_parameter(
            "embedding", uniform_init(rng, (config.vocab_size, config.embed_dim), config.embed_dim))
        self.decoder = []
        for layer in range(config.decoder_layers):
            width = config.embed_dim if layer == 0 else config.decoder_hidden
            self.decoder.append(self.add_module(f"decoder{layer + 1}", LSTM(width, config.decoder_hidden, rng)))
        self.joint_enc = self.add_module("joint_enc", Linear(2 * h, config.joint_hidden, rng))
        self.joint_pred = self.add_module("joint_pred", Linear(config.decoder_hidden, config.joint_hidden, rng))
        self.joint_out = self.add_module("joint_out", Linear(config.joint_hidden, config.vocab_size, rng))


def build_rnnt(cfg: RnntConfig, seed: int = 0) -> RnntModel:
    model = RnntModel(cfg, np.random.default_rng(seed))
    logger.info("Built RNN-T: %d encoder layers, vocab %d, %d parameters",
                cfg.encoder_layers, cfg.vocab_size, model.parameter_count())
    return model


@dataclass
class PosteriorGrid:
    """Joint logits z of shape (T, U+1, |Y|+1)."""
    logits: Tensor

    def __post_init__(self):
        if self.logits.ndim != 3:
            raise ShapeError(f"posterior grid must be 3-D, got {self.logits.shape}")

    @property
    def frames(self) -> int:
        return self.logits.shape[0]

    @property
    def labels(self) -> int:
        """U, the target length."""
        return self.logits.shape[1] - 1

    @property
    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits.data, axis=-1)

    def log_probs_tensor(self) -> Tensor:
        return T.log_softmax(self.logits, axis=-1)


def _as_tensor(a: Union[FeatureMatrix, Tensor, np.ndarray]) -> Tensor:
    if isinstance(a, Tensor):
        return a
    if isinstance(a, FeatureMatrix):
        return Tensor(a.values)
    return Tensor(a)


def encode(m: RnntModel, a: Union[FeatureMatrix, Tensor]) -> Tensor:
    """(T, input_dim) features -> (T', 2H) encoder states."""
    x = _as_tensor(a)
    cfg = m.config
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ShapeError(f"encode: expected (frames, {cfg.input_dim}) features, got {x.shape}")
    if x.shape[0] < cfg.min_frames:
        raise DataError(f"encode: {x.shape[0]} frames, need at least {cfg.min_frames}")
    for index, layer in enumerate(m.encoder, start=1):
        x = layer(x)
        if index in cfg.subsample_after:
            x = x[0::2]
    return x


def predict(m: RnntModel, y: Sequence[int]) -> Tensor:
    """Prediction network outputs for [blank] + y, one row per prefix (U+1 rows)."""
    ids = np.array([BLANK_ID] + list(y), dtype=np.int64)
    if ids.size > 1 and (ids[1:].min() < 1 or ids.max() >= m.config.vocab_size):
        raise DataError(f"predict: label ids must lie in 1..{m.config.vocab_size - 1}")
    x = m.embedding[ids]
    for layer in m.decoder:
        x = layer(x)
    return x


def joint(m: RnntModel, h_enc: Tensor, h_pred: Tensor) -> PosteriorGrid:
    """z = Linear(tanh(Linear(h_enc) + Linear(h_pred))) on the (T, U+1) grid."""
    frames, rows = h_enc.shape[0], h_pred.shape[0]
    width = m.config.joint_hidden
    enc = m.joint_enc(h_enc).reshape(frames, 1, width)
    pred = m.joint_pred(h_pred).reshape(1, rows, width)
    hidden = T.tanh(T.expand(enc, (frames, rows, width)) + T.expand(pred, (frames, rows, width)))
    logits = m.joint_out(hidden.reshape(frames * rows, width))
    return PosteriorGrid(logits.reshape(frames, rows, m.config.vocab_size))


# ---------------------------------------------------------------------------
# transducer loss

def transducer_alphas(log_probs: np.ndarray, y: Sequence[int], blank: int = BLANK_ID) -> np.ndarray:
    """log alpha(t, u): probability of emitting y_1..y_u by frame t (before the emission at t)."""
    frames, rows, _ = log_probs.shape
    alpha = np.full((frames, rows), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(frames):
        for u in range(rows):
            if t == 0 and u == 0:
                continue
            stay = alpha[t - 1, u] + log_probs[t - 1, u, blank] if t > 0 else -np.inf
            emit = alpha[t, u - 1] + log_probs[t, u - 1, y[u - 1]] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(stay, emit)
    return alpha


def transducer_betas(log_probs: np.ndarray, y: Sequence[int], blank: int = BLANK_ID) -> np.ndarray:
    """log beta(t, u): probability of completing the alignment from node (t, u)."""
    frames, rows, _ = log_probs.shape
    beta = np.full((frames, rows), -np.inf)
    beta[-1, -1] = log_probs[-1, -1, blank]
    for t in range(frames - 1, -1, -1):
        for u in range(rows - 1, -1, -1):
            if t == frames - 1 and u == rows - 1:
                continue
            stay = beta[t + 1, u] + log_probs[t, u, blank] if t < frames - 1 else -np.inf
            emit = beta[t, u + 1] + log_probs[t, u, y[u]] if u < rows - 1 else -np.inf
            beta[t, u] = np.logaddexp(stay, emit)
    return beta


class RnntLoss(Function):
    """-log P(y | x) summed over all monotonic alignments of a (T, U+1, V) logit grid."""
    name = "rnnt_loss"

    def forward(self, z):
        y = self.attrs['labels']
        if z.ndim != 3 or z.shape[1] != len(y) + 1:
            raise ShapeError(f"{self.name}: grid {z.shape} does not fit {len(y)} labels")
        if not np.all(np.isfinite(z)):
            raise NumericalError(f"{self.name}: logits contain NaN or infinity")
        lp = log_softmax(z, axis=-1)
        alpha = transducer_alphas(lp, y)
        log_total = alpha[-1, -1] + lp[-1, -1, BLANK_ID]
        if not np.isfinite(log_total):
            raise NumericalError(f"{self.name}: total alignment probability underflowed")
        self.cache = (lp, alpha, log_total)
        return np.asarray(-log_total)

    def backward(self, g):
        y = self.attrs['labels']
        lp, alpha, log_total = self.cache
        beta = transducer_betas(lp, y)
        frames, rows, _ = lp.shape
        dlp = np.zeros_like(lp)
        # blank moves (t, u) -> (t+1, u); the terminal blank leaves (T-1, U)
        dlp[:-1, :, BLANK_ID] = -np.exp(alpha[:-1] + lp[:-1, :, BLANK_ID] + beta[1:] - log_total)
        dlp[-1, -1, BLANK_ID] = -np.exp(alpha[-1, -1] + lp[-1, -1, BLANK_ID] - log_total)
        if rows > 1:
            idx = np.asarray(y, dtype=np.int64)
            cols = np.arange(rows - 1)
            emit = lp[:, cols, idx]
            dlp[:, cols, idx] = -np.exp(alpha[:, :-1] + emit + beta[:, 1:] - log_total)
        dz = dlp - np.exp(lp) * dlp.sum(axis=-1, keepdims=True)
        return g * dz


def rnnt_loss(grid: PosteriorGrid, y: Sequence[int]) -> Tensor:
    return RnntLoss.apply(grid.logits, labels=tuple(int(v) for v in y))


def log_likelihood(grid: PosteriorGrid, y: Sequence[int]) -> float:
    """log P(y | x) from the backward recursion (equals -rnnt_loss)."""
    return float(transducer_betas(grid.log_probs, list(y))[0, 0])


def alignment_occupancy(grid: PosteriorGrid, y: Sequence[int]) -> np.ndarray:
    """Posterior probability of visiting each (t, u) node; every anti-diagonal cut sums to one."""
    lp = grid.log_probs
    alpha = transducer_alphas(lp, y)
    beta = transducer_betas(lp, y)
    return np.exp(alpha + beta - beta[0, 0])


def utterance_loss(m: RnntModel, features: Union[FeatureMatrix, Tensor], y: Sequence[int]) -> Tensor:
    return rnnt_loss(posterior_grid(m, features, y), y)


def posterior_grid(m: RnntModel, features: Union[FeatureMatrix, Tensor], y: Sequence[int]) -> PosteriorGrid:
    return joint(m, encode(m, features), predict(m, y))


# ---------------------------------------------------------------------------
# decoding

def _predictor_step(m: RnntModel, label: int, states: List[Tuple[Tensor, Tensor]]):
    x = m.embedding[np.array([label])]
    new_states = []
    for layer, (h, c) in zip(m.decoder, states):
        gx = T.matmul(x, layer.w_input) + layer.bias.reshape(1, -1)
        h, c = T.lstm_cell(gx, h, c, layer.w_hidden)
        new_states.append((h, c))
        x = h
    return x, new_states


def greedy_decode(m: RnntModel, a: Union[FeatureMatrix, Tensor], max_symbols_per_frame: int = 4) -> List[int]:
    """Emit the arg-max label at each frame until blank or the per-frame cap, then advance."""
    if max_symbols_per_frame < 1:
        raise ConfigError("max_symbols_per_frame must be at least 1")
    hidden = m.config.decoder_hidden
    with T.no_grad():
        h_enc = m.joint_enc(encode(m, a)).data
        states = [(Tensor(np.zeros((1, hidden))), Tensor(np.zeros((1, hidden)))) for _ in m.decoder]
        pred_out, states = _predictor_step(m, BLANK_ID, states)
        pred = m.joint_pred(pred_out).data[0]
        out_w, out_b = m.joint_out.weight.data, m.joint_out.bias.data
        hyp: List[int] = []
        for t in range(h_enc.shape[0]):
            for _ in range(max_symbols_per_frame):
                logits = np.tanh(h_enc[t] + pred) @ out_w + out_b
                k = int(np.argmax(logits))
                if k == BLANK_ID:
                    break
                hyp.append(k)
                pred_out, states = _predictor_step(m, k, states)
                pred = m.joint_pred(pred_out).data[0]
    return hyp
