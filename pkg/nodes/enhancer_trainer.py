"""
Enhancer training: the DCRN learns complex spectral mapping from noisy to
clean speech on pairs mixed on the fly.
"""

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models import tensor as T
from models.dcrn import (EnhancementModel, build_dcrn, dcrn_forward, dcrn_forward_tensor, enhancement_loss,
                         enhancement_loss_tensor)
from models.tensor import Tensor
from nodes.base_node import BaseNode, assemble_batch
from nodes.training_loop import VALIDATION_STREAM, TrainerSettings, phase_records, run_phase
from utils.augment import AugmentPolicy, enhancement_training_pair, worker_rng
from utils.dsp import ComplexSpectrogram, Waveform, stft
from utils.error_handler import DataError
from utils.metrics import evaluate_enhancer
from utils.schedule import Schedule

logger = logging.getLogger(__name__)

PHASE = "enhancer"


def _spectra(dcrn: EnhancementModel, noisy: Waveform, clean: Waveform) -> Tuple[ComplexSpectrogram, ComplexSpectrogram]:
    cfg = dcrn.config.stft
    return stft(noisy, cfg), stft(clean, cfg)


def validation_pairs(dcrn: EnhancementModel, clean: Sequence[Waveform], noises: Sequence[Waveform],
                     policy: AugmentPolicy, seed: int) -> List[Tuple[ComplexSpectrogram, ComplexSpectrogram]]:
    """Fixed (noisy, clean) spectra for validation, drawn once per phase."""
    pairs = []
    for index, s in enumerate(clean):
        noisy, target, _ = enhancement_training_pair(s, noises, policy, worker_rng(seed, VALIDATION_STREAM, index))
        pairs.append(_spectra(dcrn, noisy, target))
    return pairs


def train_enhancer(dcrn: EnhancementModel, clean_corpus: Sequence[Waveform], noise_corpus: Sequence[Waveform],
                   policy: AugmentPolicy, sched: Schedule, settings: TrainerSettings,
                   valid_corpus: Optional[Sequence[Waveform]] = None, step: int = 1,
                   node: Optional[BaseNode] = None) -> EnhancementModel:
    """
    Minimize the spectral mapping loss on (clean + noise, clean) pairs.

    Every item of every epoch draws its own SNR from the policy's enhancer
    range and its own noise excerpt. Validation uses ``valid_corpus`` (or
    the training corpus) mixed once with a fixed stream.
    """
    if not clean_corpus:
        raise DataError("train_enhancer: clean corpus is empty")
    if not noise_corpus:
        raise DataError("train_enhancer: noise corpus is empty")
    kind = dcrn.config.loss
    valid = validation_pairs(dcrn, valid_corpus or clean_corpus, noise_corpus, policy, settings.seed)

    def build(item: Tuple[int, int]):
        epoch, index = item
        noisy, target, _ = enhancement_training_pair(clean_corpus[index], noise_corpus, policy,
                                                     worker_rng(settings.seed, epoch, index))
        return _spectra(dcrn, noisy, target)

    def batch_loss(epoch: int, batch: int, indices: Sequence[int]) -> Tensor:
        spectra = assemble_batch([(epoch, i) for i in indices], build, settings.threads)
        total = None
        for X, S in spectra:
            real, imag = dcrn_forward_tensor(dcrn, Tensor(X.real), Tensor(X.imag))
            loss = enhancement_loss_tensor(real, imag, S.real, S.imag, kind)
            total = loss if total is None else total + loss
        return total / len(spectra)

    def validate() -> Tuple[float, Optional[float]]:
        with T.no_grad():
            losses = [enhancement_loss(dcrn_forward(dcrn, X), S, kind) for X, S in valid]
        return float(np.mean(losses)), None

    run_phase(PHASE, step, {"dcrn": dcrn}, {}, sched, len(clean_corpus), batch_loss, validate, settings, node)
    return dcrn


class EnhancerTrainerNode(BaseNode):
    """Step 1 (enhancer side): train the DCRN on the train split."""

    def __init__(self):
        super().__init__("enhancer_trainer")

    def should_skip(self, state: Dict[str, Any]) -> bool:
        return state.get("dcrn") is not None and state["dcrn"].trained

    def process(self, state: Dict[str, Any]) -> Dict[str, Any]:
        config = state["config"]
        manifest = state["manifest"]
        settings = state["settings"]
        dcrn = state.get("dcrn") or build_dcrn(config.dcrn_config(), seed=config.seed)
        clean = [e.audio for e in state["train_examples"]]
        valid = [e.audio for e in state["valid_examples"]]
        noises = manifest.noise_waveforms("train")
        train_enhancer(dcrn, clean, noises, config.augment_policy(), config.tri_stage(config.epochs.enhancer),
                       settings, valid_corpus=valid, node=self)

        heldout = manifest.noise_waveforms("heldout") or noises
        sweep = evaluate_enhancer(dcrn, valid, heldout[0])
        if settings.run_logger:
            settings.run_logger.write_table("enhancer_sweep", sweep)
        at_zero = sweep.loc[sweep["snr_db"] == 0.0, "improvement"]
        if len(at_zero):
            self.report_progress(f"SI-SNR improvement at 0 dB: {float(at_zero.iloc[0]):.2f} dB")
        return {"dcrn": dcrn, "enhancer_sweep": sweep.to_dict(orient="records"),
                "phase_results": phase_records(settings)}
