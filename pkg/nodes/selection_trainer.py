"""
Selection module training in two phases.

Phase 1 trains only the selection module with the ASR loss while the
transducer and the enhancer stay fixed. Phase 2 trains the selection module
and the transducer together at a small learning rate, enhancer still fixed.
Enhanced features are computed without gradient in both phases.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

from models.dcrn import EnhancementModel
from models.recognizer import Recognizer, asr_features
from models.rnnt import RnntModel, Vocabulary, utterance_loss
from models.selection import SelectionModel, build_selection, select_features_tensor, selection_forward_tensor
from models.tensor import Tensor
from nodes.asr_trainer import validation_scores
from nodes.base_node import BaseNode, assemble_batch
from nodes.training_loop import Example, PhaseResult, TrainerSettings, clone, phase_records, phase_seed, run_phase
from utils.augment import spec_augment_tensor, worker_rng
from utils.error_handler import ConfigError, DataError, UsageError
from utils.schedule import ConstantSchedule, Schedule

logger = logging.getLogger(__name__)


@dataclass
class SelectionPhases:
    """Schedules of the two phases; phase 2 normally runs at the fine-tuning rate."""
    phase1: Schedule
    phase2: Schedule

    @classmethod
    def constant(cls, epochs1: int, lr1: float, epochs2: int, lr2: float) -> "SelectionPhases":
        return cls(ConstantSchedule(total_epochs=epochs1, lr=lr1), ConstantSchedule(total_epochs=epochs2, lr=lr2))


def _require_trained(rnnt: RnntModel, dcrn: EnhancementModel):
    missing = [name for name, m in (("rnnt", rnnt), ("dcrn", dcrn)) if not m.trained]
    if missing:
        raise UsageError(f"selection training needs pre-trained models; untrained: {', '.join(missing)}")


def train_selection(sm: SelectionModel, rnnt: RnntModel, dcrn: EnhancementModel, corpus: Sequence[Example],
                    phases: SelectionPhases, settings: TrainerSettings, vocabulary: Vocabulary,
                    valid: Optional[Sequence[Example]] = None, step: int = 4,
                    node: Optional[BaseNode] = None) -> Tuple[SelectionModel, RnntModel, List[PhaseResult]]:
    """
    Run both phases and return the trained selection module, the transducer
    and one PhaseResult per phase. Checkpoints go under ``step`` (phase 1)
    and ``step + 1`` (phase 2).

    Raises:
        UsageError: the transducer or the enhancer has not been trained
        DataError: empty corpus
    """
    _require_trained(rnnt, dcrn)
    if not corpus:
        raise DataError("train_selection: corpus is empty")
    recognizer = Recognizer(rnnt, vocabulary, dcrn=dcrn, selection=sm,
                            max_symbols_per_frame=settings.max_symbols_per_frame)
    masking = settings.masking()
    # enhanced features do not depend on any trainable group
    enhanced = assemble_batch([ex.audio for ex in corpus], recognizer.enhanced_features, settings.threads)
    held_out = list(valid) if valid else list(corpus)

    def validate() -> Tuple[float, Optional[float]]:
        return validation_scores(recognizer, held_out)

    def make_batch_loss(phase: str):
        root = phase_seed(settings.seed, step, phase)

        def batch_loss(epoch: int, batch: int, indices: Sequence[int]) -> Tensor:
            total = None
            for index in indices:
                ex = corpus[index]
                a = Tensor(asr_features(ex.audio).values)
                a_hat = Tensor(enhanced[index].values)
                p = selection_forward_tensor(sm, a, a_hat)
                x = select_features_tensor(p, a, a_hat)
                if masking:
                    x = spec_augment_tensor(x, masking, worker_rng(root, epoch, index))
                loss = utterance_loss(rnnt, x, ex.labels)
                total = loss if total is None else total + loss
            return total / len(indices)
        return batch_loss

    results = []
    logger.info("selection phase 1: selection module only")
    results.append(run_phase("selection_phase1", step, {"selection": sm}, {"rnnt": rnnt, "dcrn": dcrn},
                             phases.phase1, len(corpus), make_batch_loss("selection_phase1"), validate,
                             settings, node))
    logger.info("selection phase 2: selection module and RNN-T")
    results.append(run_phase("selection_phase2", step + 1, {"selection": sm, "rnnt": rnnt}, {"dcrn": dcrn},
                             phases.phase2, len(corpus), make_batch_loss("selection_phase2"), validate,
                             settings, node))
    return sm, rnnt, results


class SelectionTrainerNode(BaseNode):
    """Train a selection module on top of the step-3 models (copies are trained)."""

    def __init__(self, rnnt_key: str = "rnnt_step3", dcrn_key: str = "dcrn_step3"):
        super().__init__("selection_trainer")
        self.rnnt_key = rnnt_key
        self.dcrn_key = dcrn_key

    def validate_inputs(self, state: Dict[str, Any]):
        for key in (self.rnnt_key, self.dcrn_key):
            if state.get(key) is None:
                raise ConfigError(f"selection training needs '{key}' in the workflow state")

    def process(self, state: Dict[str, Any]) -> Dict[str, Any]:
        config = state["config"]
        settings = state["settings"]
        sm = build_selection(config.selection_config(), seed=config.seed)
        rnnt = clone(state[self.rnnt_key])
        phases = SelectionPhases.constant(config.epochs.selection_phase1, config.schedule.peak_lr,
                                          config.epochs.selection_phase2, config.schedule.fine_tune_lr)
        train_selection(sm, rnnt, state[self.dcrn_key], state["train_examples"], phases, settings,
                        state["manifest"].vocabulary, valid=state["valid_examples"], node=self)
        return {"selection": sm, "rnnt_selection": rnnt, "phase_results": phase_records(settings)}
