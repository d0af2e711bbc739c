"""
Recognition front end: waveform -> ASR features -> transcript.

A recognizer bundles the transducer with an optional enhancer and an optional
selection module:

    rnnt only                a = norm(logmel(x))
    rnnt + dcrn              a_hat = norm(logmel(enhance(x)))
    rnnt + dcrn + selection  p*a + (1 - p)*a_hat
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from models import tensor as T
from models.dcrn import EnhancementModel, dcrn_forward, enhance, enhance_tensor, spectral_gain
from models.rnnt import RnntModel, Vocabulary, greedy_decode, utterance_loss
from models.selection import (SelectionMask, SelectionModel, select_features, select_features_tensor,
                              selection_forward, selection_forward_tensor)
from models.tensor import Tensor
from utils.dsp import (FeatureMatrix, Waveform, logmel, logmel_tensor, normalize_tensor, normalize_utterance,
                       stft)
from utils.error_handler import ConfigError

logger = logging.getLogger(__name__)


def asr_features(w: Waveform) -> FeatureMatrix:
    return normalize_utterance(logmel(w))


def asr_features_tensor(x: Tensor) -> Tensor:
    """Differentiable ``asr_features`` of a 1-D sample tensor."""
    return normalize_tensor(logmel_tensor(x))


@dataclass
class Recognizer:
    rnnt: RnntModel
    vocabulary: Vocabulary
    dcrn: Optional[EnhancementModel] = None
    selection: Optional[SelectionModel] = None
    max_symbols_per_frame: int = 4

    def __post_init__(self):
        if self.selection is not None and self.dcrn is None:
            raise ConfigError("a selection module needs an enhancer")
        if self.vocabulary.size != self.rnnt.config.vocab_size:
            raise ConfigError(f"vocabulary has {self.vocabulary.size} symbols (blank included), "
                              f"RNN-T outputs {self.rnnt.config.vocab_size}")

    @property
    def mode(self) -> str:
        if self.dcrn is None:
            return "original"
        return "selection" if self.selection is not None else "enhanced"

    def enhanced_features(self, w: Waveform) -> FeatureMatrix:
        with T.no_grad():
            return asr_features(enhance(self.dcrn, w))

    def features(self, w: Waveform) -> FeatureMatrix:
        a = asr_features(w)
        if self.dcrn is None:
            return a
        a_hat = self.enhanced_features(w)
        if self.selection is None:
            return a_hat
        return select_features(selection_forward(self.selection, a, a_hat), a, a_hat)

    def features_tensor(self, w: Waveform, through_enhancer: bool = False) -> Tensor:
        """
        Features as a graph node.

        With ``through_enhancer`` the enhancement runs on tensors so the ASR
        loss reaches the DCRN parameters; otherwise enhanced features are
        constants and only the selection module (if any) is differentiated.
        """
        a = Tensor(asr_features(w).values)
        if self.dcrn is None:
            return a
        if through_enhancer:
            a_hat = asr_features_tensor(enhance_tensor(self.dcrn, Tensor(w.samples)))
        else:
            a_hat = Tensor(self.enhanced_features(w).values)
        if self.selection is None:
            return a_hat
        p = selection_forward_tensor(self.selection, a, a_hat)
        return select_features_tensor(p, a, a_hat)

    def mask(self, w: Waveform) -> Optional[SelectionMask]:
        if self.selection is None:
            return None
        return selection_forward(self.selection, asr_features(w), self.enhanced_features(w))

    def enhanced_waveform(self, w: Waveform) -> Waveform:
        if self.dcrn is None:
            return w
        with T.no_grad():
            return enhance(self.dcrn, w)

    def decode_ids(self, w: Waveform) -> List[int]:
        return greedy_decode(self.rnnt, self.features(w), self.max_symbols_per_frame)

    def transcribe(self, w: Waveform) -> str:
        return self.vocabulary.decode(self.decode_ids(w))

    def loss(self, w: Waveform, transcript: str) -> float:
        with T.no_grad():
            return utterance_loss(self.rnnt, self.features(w), self.vocabulary.encode(transcript)).item()

    def gain(self, w: Waveform) -> np.ndarray:
        """Implied magnitude gain of the enhancer on ``w`` (frames x bins)."""
        if self.dcrn is None:
            raise ConfigError("no enhancer attached")
        spec = stft(w, self.dcrn.config.stft)
        return spectral_gain(spec, dcrn_forward(self.dcrn, spec))
