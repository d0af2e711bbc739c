"""
Finite-difference gradient checks of the differentiable building blocks.

Each case builds a small random problem, differentiates a scalar function
with respect to one input tensor and compares against central differences.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from models.consistency import LossWeights, combined_loss, kl_consistency
from models.dcrn import build_dcrn, dcrn_forward_tensor, dcrn_preset
from models.rnnt import PosteriorGrid, RnntConfig, build_rnnt, rnnt_loss
from models.selection import SelectionConfig, build_selection, selection_forward_tensor
from models.tensor import Tensor, grad_check

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4


@dataclass
class GradCheckResult:
    name: str
    max_relative_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_relative_error)) and self.max_relative_error < self.tolerance

    def as_row(self) -> Dict[str, object]:
        return {"check": self.name, "max_relative_error": self.max_relative_error, "passed": self.passed}


def _rnnt_loss_case(rng: np.random.Generator) -> float:
    y = [1, 2]
    x = Tensor(rng.normal(size=(4, len(y) + 1, 4)))
    return grad_check(lambda z: rnnt_loss(PosteriorGrid(z), y), x)


def _kl_case(rng: np.random.Generator) -> float:
    other = PosteriorGrid(Tensor(rng.normal(size=(3, 3, 4))))
    x = Tensor(rng.normal(size=(3, 3, 4)))
    return grad_check(lambda z: kl_consistency(PosteriorGrid(z), other), x)


def _combined_case(rng: np.random.Generator) -> float:
    m = build_rnnt(RnntConfig(input_dim=4, vocab_size=3, encoder_layers=2, encoder_hidden=3,
                              decoder_layers=1, decoder_hidden=3, embed_dim=2, joint_hidden=4), seed=1)
    y = [1, 2]
    other = Tensor(rng.normal(size=(8, 4)))
    x = Tensor(rng.normal(size=(8, 4)))
    return grad_check(lambda z: combined_loss(m, (z, other), y, LossWeights(0.5)).total, x)


def _dcrn_case(rng: np.random.Generator, preset: str) -> float:
    cfg = dcrn_preset(preset)
    m = build_dcrn(cfg, seed=2)
    frames, bins = 4, cfg.input_bins
    imag = Tensor(rng.normal(size=(frames, bins)))
    weights = [Tensor(rng.normal(size=(frames, bins))) for _ in range(2)]

    def f(real: Tensor) -> Tensor:
        re, im = dcrn_forward_tensor(m, real, imag)
        return (re * weights[0]).sum() + (im * weights[1]).sum()
    return grad_check(f, Tensor(rng.normal(size=(frames, bins))), max_checks=24, seed=3)


def _selection_case(rng: np.random.Generator) -> float:
    sm = build_selection(SelectionConfig(feature_dim=4, hidden=3, blstm_state=2), seed=4)
    a_hat = Tensor(rng.normal(size=(5, 4)))
    w = Tensor(rng.normal(size=(5, 4)))
    return grad_check(lambda a: (selection_forward_tensor(sm, a, a_hat) * w).sum(), Tensor(rng.normal(size=(5, 4))))


def run_grad_suite(seed: int = 0, dcrn: str = "toy", tolerance: float = TOLERANCE) -> List[GradCheckResult]:
    """Run every check; the DCRN case uses the named preset."""
    cases: Dict[str, Callable[[np.random.Generator], float]] = {
        "rnnt_loss": _rnnt_loss_case,
        "kl_consistency": _kl_case,
        "combined_loss": _combined_case,
        f"dcrn_forward[{dcrn}]": lambda rng: _dcrn_case(rng, dcrn),
        "selection_forward": _selection_case,
    }
    results = []
    for k, (name, case) in enumerate(cases.items()):
        error = case(np.random.default_rng([seed, k]))
        results.append(GradCheckResult(name, float(error), tolerance))
        logger.info("grad check %-22s max rel. error %.3e", name, error)
    return results
