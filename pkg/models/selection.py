"""
Time-frequency selection between original and enhanced features.

A small recurrent network looks at both normalized log-mel streams and emits
p(t, f) in (0, 1); the ASR then consumes p·a + (1 - p)·a_hat.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Union

import numpy as np

from models import tensor as T
from models.layers import BLSTM, Linear, Module
from models.tensor import Tensor
from utils.dsp import FeatureMatrix, N_MELS
from utils.error_handler import ConfigError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionConfig:
    feature_dim: int = N_MELS
    hidden: int = 128
    blstm_state: int = 128
    blstm_layers: int = 2

    def __post_init__(self):
        if min(self.feature_dim, self.hidden, self.blstm_state, self.blstm_layers) < 1:
            raise ConfigError(f"selection sizes must be positive: {self}")

    @property
    def input_dim(self) -> int:
        return 2 * self.feature_dim

    def parameter_count(self) -> int:
        h = self.blstm_state
        return (Linear.count(self.input_dim, self.hidden) + BLSTM.count(self.hidden, h)
                + (self.blstm_layers - 1) * BLSTM.count(2 * h, h) + Linear.count(2 * h, self.feature_dim))


SELECTION_PRESETS: Dict[str, SelectionConfig] = {
    "full": SelectionConfig(),
    "toy": SelectionConfig(hidden=32, blstm_state=32),
    "tiny": SelectionConfig(feature_dim=4, hidden=3, blstm_state=2),
}


def selection_preset(name: str) -> SelectionConfig:
    try:
        return SELECTION_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown selection preset '{name}' (choose from {sorted(SELECTION_PRESETS)})") from None


class SelectionModel(Module):
    def __init__(self, config: SelectionConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.input_layer = self.add_module("input", Linear(config.input_dim, config.hidden, rng))
        self.blstms = []
        width = config.hidden
        for layer in range(config.blstm_layers):
            self.blstms.append(self.add_module(f"blstm{layer + 1}", BLSTM(width, config.blstm_state, rng)))
            width = 2 * config.blstm_state
        self.output_layer = self.add_module("output", Linear(width, config.feature_dim, rng))


def build_selection(cfg: SelectionConfig, seed: int = 0) -> SelectionModel:
    return SelectionModel(cfg, np.random.default_rng(seed))


@dataclass
class SelectionMask:
    """p(t, f) for every time-frequency bin."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"selection mask must be 2-D, got {self.values.shape}")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise ShapeError("selection mask values must lie in [0, 1]")


def _check_pair(a_shape, a_hat_shape):
    if tuple(a_shape) != tuple(a_hat_shape):
        raise ShapeError(f"original features {tuple(a_shape)} and enhanced {tuple(a_hat_shape)} do not conform")


def selection_forward_tensor(sm: SelectionModel, a: Tensor, a_hat: Tensor) -> Tensor:
    _check_pair(a.shape, a_hat.shape)
    if a.ndim != 2 or a.shape[1] != sm.config.feature_dim:
        raise ShapeError(f"selection expects (frames, {sm.config.feature_dim}) features, got {a.shape}")
    x = sm.input_layer(T.concat([a, a_hat], axis=1))
    for blstm in sm.blstms:
        x = blstm(x)
    return T.sigmoid(sm.output_layer(x))


def selection_forward(sm: SelectionModel, a: FeatureMatrix, a_hat: FeatureMatrix) -> SelectionMask:
    with T.no_grad():
        p = selection_forward_tensor(sm, Tensor(a.values), Tensor(a_hat.values))
    return SelectionMask(p.data)


def select_features(p: Union[SelectionMask, np.ndarray], a: FeatureMatrix, a_hat: FeatureMatrix) -> FeatureMatrix:
    """a_bar = p·a + (1 - p)·a_hat, bin by bin."""
    values = p.values if isinstance(p, SelectionMask) else np.asarray(p, dtype=np.float64)
    _check_pair(a.values.shape, a_hat.values.shape)
    _check_pair(values.shape, a.values.shape)
    return FeatureMatrix(values * a.values + (1.0 - values) * a_hat.values)


def select_features_tensor(p: Tensor, a: Tensor, a_hat: Tensor) -> Tensor:
    _check_pair(a.shape, a_hat.shape)
    _check_pair(p.shape, a.shape)
    return p * a + (1.0 - p) * a_hat
