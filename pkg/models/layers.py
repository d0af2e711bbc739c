"""
Parameter containers and the recurrent/linear layers shared by all models.
"""

import hashlib
import logging
from typing import Dict, Iterable, List, Optional

import numpy as np

from models import tensor as T
from models.tensor import Tensor
from utils.error_handler import NumericalError, ShapeError

logger = logging.getLogger(__name__)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """A named collection of parameter tensors and child modules."""

    def __init__(self):
        self._parameters: Dict[str, Tensor] = {}
        self._modules: Dict[str, "Module"] = {}
        # training phases (or checkpoint files) that produced the current weights
        self.trained_by: List[str] = []

    def add_parameter(self, name: str, value: np.ndarray) -> Tensor:
        param = Tensor(value, requires_grad=True, name=name)
        self._parameters[name] = param
        return param

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        named = {f"{prefix}{name}": p for name, p in self._parameters.items()}
        for child_name, child in self._modules.items():
            named.update(child.named_parameters(f"{prefix}{child_name}."))
        return named

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ShapeError(f"checkpoint mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"checkpoint mismatch for {name}: {value.shape} vs {p.shape}")
            p.data = value.copy()

    def mark_trained(self, source: str):
        self.trained_by.append(source)

    @property
    def trained(self) -> bool:
        return bool(self.trained_by)

    def checksum(self) -> str:
        """SHA-256 over parameter names and raw bytes, in name order."""
        digest = hashlib.sha256()
        for name, p in sorted(self.named_parameters().items()):
            digest.update(name.encode('utf-8'))
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()


class Linear(Module):
    """y = x W + b on a (N, in) matrix."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_parameter("weight", uniform_init(rng, (in_features, out_features), in_features))
        self.bias = self.add_parameter("bias", uniform_init(rng, (out_features,), in_features))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear: input {x.shape} does not match in_features {self.in_features}")
        y = T.matmul(x, self.weight)
        return y + T.expand(self.bias.reshape(1, self.out_features), y.shape)

    @staticmethod
    def count(in_features: int, out_features: int) -> int:
        return in_features * out_features + out_features


class LSTM(Module):
    """Single-direction LSTM over a (T, in) sequence."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_input = self.add_parameter("w_input", uniform_init(rng, (input_size, 4 * hidden_size), input_size))
        self.w_hidden = self.add_parameter("w_hidden", uniform_init(rng, (hidden_size, 4 * hidden_size), hidden_size))
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size:2 * hidden_size] = 1.0
        self.bias = self.add_parameter("bias", bias)

    def __call__(self, seq: Tensor, reverse: bool = False) -> Tensor:
        if seq.ndim != 2 or seq.shape[1] != self.input_size:
            raise ShapeError(f"lstm: input {seq.shape} does not match input_size {self.input_size}")
        steps, hidden = seq.shape[0], self.hidden_size
        gx = T.matmul(seq, self.w_input)
        gx = gx + T.expand(self.bias.reshape(1, 4 * hidden), gx.shape)
        rows = T.unbind(gx.reshape(steps, 1, 4 * hidden), axis=0)
        h = Tensor(np.zeros((1, hidden)))
        c = Tensor(np.zeros((1, hidden)))
        outputs: List[Optional[Tensor]] = [None] * steps
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        for t in order:
            h, c = T.lstm_cell(rows[t], h, c, self.w_hidden)
            outputs[t] = h
        return T.concat(outputs, axis=0)

    @staticmethod
    def count(input_size: int, hidden_size: int) -> int:
        return 4 * hidden_size * (input_size + hidden_size + 1)


class BLSTM(Module):
    """Bidirectional LSTM; output is [forward, backward] of width 2H."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.forward_lstm = self.add_module("forward", LSTM(input_size, hidden_size, rng))
        self.backward_lstm = self.add_module("backward", LSTM(input_size, hidden_size, rng))
        self.output_size = 2 * hidden_size

    def __call__(self, seq: Tensor) -> Tensor:
        return T.concat([self.forward_lstm(seq), self.backward_lstm(seq, reverse=True)], axis=1)

    @staticmethod
    def count(input_size: int, hidden_size: int) -> int:
        return 2 * LSTM.count(input_size, hidden_size)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in params)))
    if not np.isfinite(total):
        raise NumericalError(f"gradient norm is not finite ({total})")
    if total > max_norm > 0:
        scale = max_norm / total
        for p in params:
            p.grad = p.grad * scale
    return total


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: Iterable[Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.steps = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float):
        self.steps += 1
        bias1 = 1.0 - self.beta1 ** self.steps
        bias2 = 1.0 - self.beta2 ** self.steps
        for k, p in enumerate(self.params):
            if p.grad is None or not p.requires_grad:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * p.grad
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * p.grad ** 2
            update = lr * (self.m[k] / bias1) / (np.sqrt(self.v[k] / bias2) + self.eps)
            p.data = p.data - update
