"""
Epoch loop shared by every training phase.

A phase names the modules it updates and the modules it must leave untouched.
Each epoch shuffles the training items with a seeded stream, builds one loss
tensor per batch, clips the global gradient norm and takes an Adam step at the
schedule's rate for that epoch. After every epoch the phase validates, writes
a checkpoint per trainable module and keeps the weights with the lowest
validation loss; those are restored when the phase ends.
"""

import copy
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from models.layers import Adam, Module, clip_grad_norm
from models.rnnt import Vocabulary
from models.tensor import Tensor
from nodes.base_node import BaseNode
from nodes.training_critic import phase_critics, snapshot
from utils.augment import SpecAugmentConfig
from utils.corpus import CorpusManifest
from utils.dsp import Waveform
from utils.error_handler import DataError, NumericalError
from utils.feature_flags import is_feature_enabled
from utils.output_organizer import OutputOrganizer
from utils.run_config import RunConfig
from utils.schedule import Schedule
from utils.state_logger import RunLogger

logger = logging.getLogger(__name__)

# Stream index reserved for validation draws (training epochs use 0..epochs-1).
VALIDATION_STREAM = 2 ** 31 - 1


@dataclass
class Example:
    """A training or evaluation utterance with its audio loaded."""
    id: str
    audio: Waveform
    transcript: str
    labels: List[int]
    reference: Optional[Waveform] = None


def load_examples(manifest: CorpusManifest, split: str, vocabulary: Optional[Vocabulary] = None,
                  with_reference: bool = False) -> List[Example]:
    vocabulary = vocabulary or manifest.vocabulary
    examples = []
    for utt in manifest.split(split):
        examples.append(Example(
            id=utt.id,
            audio=manifest.audio(utt),
            transcript=utt.transcript,
            labels=vocabulary.encode(utt.transcript),
            reference=manifest.clean_audio(utt) if with_reference else None,
        ))
    return examples


@dataclass
class TrainerSettings:
    seed: int = 0
    batch_size: int = 8
    clip_norm: float = 5.0
    max_batches: Optional[int] = None
    threads: int = 1
    lambda_aux: float = 0.5
    max_symbols_per_frame: int = 4
    spec_augment: Optional[SpecAugmentConfig] = None
    run_logger: Optional[RunLogger] = None
    organizer: Optional[OutputOrganizer] = None
    phase_results: List["PhaseResult"] = field(default_factory=list)

    @classmethod
    def from_run_config(cls, config: RunConfig, run_logger: Optional[RunLogger] = None,
                        organizer: Optional[OutputOrganizer] = None) -> "TrainerSettings":
        t = config.training
        return cls(
            seed=config.seed,
            batch_size=t.batch_size,
            clip_norm=t.clip_norm,
            max_batches=t.max_batches,
            threads=t.threads,
            lambda_aux=t.lambda_aux,
            max_symbols_per_frame=config.rnnt.max_symbols_per_frame,
            spec_augment=config.spec_augment_config(),
            run_logger=run_logger,
            organizer=organizer,
        )

    def masking(self) -> Optional[SpecAugmentConfig]:
        """SpecAugment settings when the flag is on and any mask is configured."""
        if self.spec_augment is None or not self.spec_augment.enabled:
            return None
        return self.spec_augment if is_feature_enabled('spec_augment') else None


@dataclass
class PhaseResult:
    phase: str
    step: int
    history: List[Dict[str, Any]]
    best_epoch: int
    best_val_loss: float
    trainable: List[str]
    frozen_before: Dict[str, str] = field(default_factory=dict)
    frozen_after: Dict[str, str] = field(default_factory=dict)
    trainable_after: Dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def phase_seed(seed: int, step: int, phase: str) -> int:
    """Root seed of one phase, derived from the run seed."""
    return int(np.random.SeedSequence([seed, step, zlib.crc32(phase.encode())]).generate_state(1)[0])


def epoch_batches(n_items: int, batch_size: int, rng: np.random.Generator,
                  max_batches: Optional[int] = None) -> List[List[int]]:
    order = rng.permutation(n_items)
    batches = [order[i:i + batch_size].tolist() for i in range(0, n_items, batch_size)]
    return batches[:max_batches] if max_batches else batches


BatchLoss = Callable[[int, int, Sequence[int]], Tensor]
Validate = Callable[[], Tuple[float, Optional[float]]]


def run_phase(phase: str, step: int, trainable: Mapping[str, Module], frozen: Mapping[str, Module],
              schedule: Schedule, n_items: int, batch_loss: BatchLoss, validate: Validate,
              settings: TrainerSettings, node: Optional[BaseNode] = None) -> PhaseResult:
    """
    Train ``trainable`` for ``schedule.total_epochs`` epochs and restore the best epoch.

    Args:
        phase: Phase name used in logs, CSV names and checkpoint metadata
        step: Checkpoint directory index (runs/<name>/step<k>/)
        trainable: Modules updated by this phase, keyed by checkpoint prefix
        frozen: Modules that must not change during the phase
        schedule: Per-epoch learning rate
        n_items: Number of training items
        batch_loss: (epoch, batch index, item indices) -> scalar loss tensor
        validate: () -> (validation loss, validation WER or None)
        settings: Batch size, clipping, seeds and output sinks
        node: Node used for progress lines

    Returns:
        PhaseResult with the per-epoch history and parameter checksums
    """
    if n_items == 0:
        raise DataError(f"{phase}: no training items")
    for module in frozen.values():
        module.freeze()
    for module in trainable.values():
        module.unfreeze()
    params = [p for module in trainable.values() for p in module.parameters()]
    optimizer = Adam(params)
    frozen_before = snapshot(frozen)
    root = phase_seed(settings.seed, step, phase)
    run_logger, organizer = settings.run_logger, settings.organizer
    if run_logger:
        run_logger.log_event("phase_start", phase=phase, step=step, trainable=sorted(trainable),
                             frozen=sorted(frozen), epochs=schedule.total_epochs)

    history: List[Dict[str, Any]] = []
    best_val, best_epoch = math.inf, -1
    best_state: Dict[str, Dict[str, np.ndarray]] = {}
    for epoch in range(schedule.total_epochs):
        lr = schedule.lr_at(epoch)
        rng = np.random.default_rng(np.random.SeedSequence([root, epoch]))
        losses = []
        for b, indices in enumerate(epoch_batches(n_items, settings.batch_size, rng, settings.max_batches)):
            optimizer.zero_grad()
            loss = batch_loss(epoch, b, indices)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"{phase}: loss is {value} at epoch {epoch}, batch {b}")
            loss.backward()
            clip_grad_norm(params, settings.clip_norm)
            optimizer.step(lr)
            losses.append(value)

        train_loss = float(np.mean(losses))
        val_loss, val_wer = validate()
        history.append({"epoch": epoch, "lr": lr, "train_loss": train_loss,
                        "val_loss": val_loss, "val_wer": val_wer})
        if run_logger:
            run_logger.log_epoch(phase, epoch, lr, train_loss, val_loss, val_wer)
        if organizer:
            for name, module in trainable.items():
                organizer.save_epoch(module, step, epoch, model=name, val_loss=val_loss)
        if math.isfinite(val_loss) and val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            best_state = {name: module.state_dict() for name, module in trainable.items()}
        if node:
            node.report_subtask(phase, epoch + 1, schedule.total_epochs,
                                f"train {train_loss:.4f} / val {val_loss:.4f}")

    if best_epoch < 0:
        raise NumericalError(f"{phase}: no epoch produced a finite validation loss")
    for name, module in trainable.items():
        module.load_state_dict(best_state[name])
        module.mark_trained(phase)
        if organizer:
            organizer.mark_best(step, best_epoch, model=name)
    for module in frozen.values():
        module.unfreeze()

    result = PhaseResult(
        phase=phase,
        step=step,
        history=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        trainable=sorted(trainable),
        frozen_before=frozen_before,
        frozen_after=snapshot(frozen),
        trainable_after=snapshot(trainable),
    )
    for critic in phase_critics():
        critic.enforce(result.as_dict())
    settings.phase_results.append(result)
    if run_logger:
        run_logger.log_event("phase_end", phase=phase, best_epoch=best_epoch, best_val_loss=best_val)
    logger.info("%s: best epoch %d (val loss %.4f)", phase, best_epoch, best_val)
    return result


def phase_records(settings: TrainerSettings) -> List[Dict[str, Any]]:
    """Phase results so far, as plain dictionaries for the workflow state."""
    return [result.as_dict() for result in settings.phase_results]


def clone(module: Module) -> Module:
    """Independent copy of a model, weights and training provenance included."""
    return copy.deepcopy(module)
