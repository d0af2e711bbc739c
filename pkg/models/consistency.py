"""
Four-variant augmentation and the KL-consistency objective.

For an utterance s and a noise signal n the variants are::

    s1 = s            s2 = mix(s, n)
    s3 = enhance(s1)  s4 = enhance(s2)

Training draws a pair of variants, runs the transducer on both and adds a
symmetric KL term between the two posterior grids to the averaged NLL.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np

from models import tensor as T
from models.dcrn import EnhancementModel, enhance
from models.rnnt import PosteriorGrid, RnntModel, posterior_grid, rnnt_loss
from models.tensor import Tensor
from utils.dsp import FeatureMatrix, Waveform, logmel, mix_at_snr, normalize_utterance
from utils.error_handler import ConfigError, ShapeError

logger = logging.getLogger(__name__)

Enhancer = Union[EnhancementModel, Callable[[Waveform], Waveform]]
ModelInput = Union[Waveform, FeatureMatrix, Tensor]

PAIR_MODES = ("uniform13_24", "s3s4", "s1s2", "s1s3")
KL_PAIR_MODES = ("none",) + PAIR_MODES


@dataclass
class SpeechVariantSet:
    s1: Waveform
    s2: Waveform
    s3: Waveform
    s4: Waveform
    noise_snr_db: float

    def __post_init__(self):
        lengths = {len(self.s1), len(self.s2), len(self.s3), len(self.s4)}
        if len(lengths) != 1:
            raise ShapeError(f"variants differ in length: {sorted(lengths)}")

    def get(self, name: str) -> Waveform:
        if name not in ("s1", "s2", "s3", "s4"):
            raise ConfigError(f"unknown variant '{name}'")
        return getattr(self, name)


@dataclass(frozen=True)
class LossWeights:
    lambda_aux: float = 0.5

    def __post_init__(self):
        if not math.isfinite(self.lambda_aux) or self.lambda_aux < 0:
            raise ConfigError(f"lambda_aux must be finite and non-negative, got {self.lambda_aux}")


@dataclass
class ConsistencyLoss:
    total: Tensor
    nll_i: float
    nll_j: float
    kl: float
    lambda_aux: float

    def as_row(self) -> dict:
        return {"nll_i": self.nll_i, "nll_j": self.nll_j, "kl": self.kl, "lambda_aux": self.lambda_aux}


def _apply_enhancer(enhancer: Enhancer, w: Waveform) -> Waveform:
    if isinstance(enhancer, EnhancementModel):
        return enhance(enhancer, w)
    return enhancer(w)


def make_variants(s: Waveform, n: Waveform, snr_db: float, m: Enhancer) -> SpeechVariantSet:
    """Build (s1, s2, s3, s4); enhancement runs without recording gradients."""
    s2 = mix_at_snr(s, n, snr_db)
    with T.no_grad():
        s3 = _apply_enhancer(m, s)
        s4 = _apply_enhancer(m, s2)
    return SpeechVariantSet(s1=s, s2=s2, s3=s3, s4=s4, noise_snr_db=float(snr_db))


def kl_consistency(gA: PosteriorGrid, gB: PosteriorGrid) -> Tensor:
    """
    Symmetric KL between two posterior grids, averaged over label index and time.

    Per node, KL(P_A||P_B) + KL(P_B||P_A) = sum_k (P_A - P_B)(log P_A - log P_B).
    """
    if gA.logits.shape != gB.logits.shape:
        raise ShapeError(f"kl_consistency: grids {gA.logits.shape} and {gB.logits.shape} do not conform")
    log_a = gA.log_probs_tensor()
    log_b = gB.log_probs_tensor()
    per_node = ((T.exp(log_a) - T.exp(log_b)) * (log_a - log_b)).sum(axis=-1)
    return per_node.mean(axis=1).mean()


def kl_consistency_value(gA: PosteriorGrid, gB: PosteriorGrid) -> float:
    with T.no_grad():
        return kl_consistency(gA, gB).item()


def utterance_features(x: ModelInput) -> Union[FeatureMatrix, Tensor]:
    """Normalized log-mel features of a waveform; features pass through unchanged."""
    if isinstance(x, Waveform):
        return normalize_utterance(logmel(x))
    return x


def combined_loss(m: RnntModel, vs: Tuple[ModelInput, ModelInput], y, w: LossWeights) -> ConsistencyLoss:
    """0.5·NLL(s_i) + 0.5·NLL(s_j) + lambda_aux·KL(grid_i, grid_j)."""
    x_i, x_j = vs
    grid_i = posterior_grid(m, utterance_features(x_i), y)
    grid_j = posterior_grid(m, utterance_features(x_j), y)
    nll_i = rnnt_loss(grid_i, y)
    nll_j = rnnt_loss(grid_j, y)
    total = 0.5 * nll_i + 0.5 * nll_j
    kl_value = 0.0
    if w.lambda_aux > 0:
        kl = kl_consistency(grid_i, grid_j)
        kl_value = kl.item()
        total = total + w.lambda_aux * kl
    return ConsistencyLoss(total=total, nll_i=nll_i.item(), nll_j=nll_j.item(),
                           kl=kl_value, lambda_aux=w.lambda_aux)


def sample_pair(vs: SpeechVariantSet, rng: np.random.Generator,
                mode: str = "uniform13_24") -> Tuple[Waveform, Waveform, str]:
    """Pick the variant pair for the KL term; ``uniform13_24`` draws (s1,s3) or (s2,s4) with equal odds."""
    if mode == "uniform13_24":
        pair = ("s1", "s3") if rng.random() < 0.5 else ("s2", "s4")
    elif mode in PAIR_MODES:
        pair = (mode[:2], mode[2:])
    else:
        raise ConfigError(f"unknown pair mode '{mode}' (choose from {PAIR_MODES})")
    return vs.get(pair[0]), vs.get(pair[1]), pair[0] + pair[1]
