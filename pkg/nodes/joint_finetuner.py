"""
Step 3: joint fine-tuning of the enhancer and the transducer with the ASR loss.

The front end runs on tensors (stft -> DCRN -> istft -> log-mel -> normalize),
so the transducer loss reaches the DCRN parameters. Both models train at a
small constant learning rate.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

from models.consistency import LossWeights, combined_loss
from models.dcrn import EnhancementModel, enhance_tensor
from models.recognizer import Recognizer, asr_features_tensor
from models.rnnt import RnntModel, Vocabulary, utterance_loss
from models.tensor import Tensor
from nodes.asr_trainer import ENHANCED_PAIR_MODES, validation_scores
from nodes.base_node import BaseNode
from nodes.training_loop import Example, TrainerSettings, clone, phase_records, phase_seed, run_phase
from utils.augment import AugmentPolicy, draw_batch_plan, noise_segment, spec_augment_tensor, worker_rng
from utils.dsp import Waveform, mix_at_snr
from utils.error_handler import ConfigError, DataError, UsageError
from utils.schedule import Schedule

logger = logging.getLogger(__name__)


@dataclass
class JointOptions:
    augment_noise: bool = False
    kl_pairs: str = "none"

    def check(self):
        if self.kl_pairs not in ENHANCED_PAIR_MODES:
            raise ConfigError(f"joint fine-tuning allows only KL pairs {ENHANCED_PAIR_MODES}, got '{self.kl_pairs}'")


def fine_tune_joint(rnnt: RnntModel, dcrn: EnhancementModel, corpus: Sequence[Example], policy: AugmentPolicy,
                    sched: Schedule, options: JointOptions, settings: TrainerSettings, vocabulary: Vocabulary,
                    noise_corpus: Sequence[Waveform] = (), valid: Optional[Sequence[Example]] = None,
                    phase: str = "step3", step: int = 3,
                    node: Optional[BaseNode] = None) -> Tuple[RnntModel, EnhancementModel]:
    """
    Update both models on enhanced features, no module frozen.

    With KL pairs ``s3s4`` every utterance contributes the enhanced clean
    and enhanced noisy variants; otherwise a batch is mixed with noise by
    the policy's coin (when ``augment_noise``) and then enhanced.

    Raises:
        UsageError: either model has not been trained yet
        DataError: empty corpus, or noise requested without noise recordings
    """
    options.check()
    if not rnnt.trained or not dcrn.trained:
        raise UsageError(f"{phase}: joint fine-tuning starts from trained models")
    if not corpus:
        raise DataError(f"{phase}: corpus is empty")
    uses_kl = options.kl_pairs != "none"
    if (options.augment_noise or uses_kl) and not noise_corpus:
        raise DataError(f"{phase}: noise augmentation requested but no noise recordings given")

    root = phase_seed(settings.seed, step, phase)
    weights = LossWeights(settings.lambda_aux)
    masking = settings.masking()
    run_logger = settings.run_logger
    counter = {"step": 0}

    def front_end(w: Waveform, rng) -> Tensor:
        x = asr_features_tensor(enhance_tensor(dcrn, Tensor(w.samples)))
        return spec_augment_tensor(x, masking, rng) if masking else x

    def batch_loss(epoch: int, batch: int, indices: Sequence[int]) -> Tensor:
        plan = draw_batch_plan(policy, worker_rng(root, epoch, len(corpus) + batch), len(indices),
                               use_noise=options.augment_noise and not uses_kl, use_enhance=False)
        plan.enhance = True
        pair_ids = []
        total = None
        for position, index in enumerate(indices):
            ex = corpus[index]
            rng = worker_rng(root, epoch, index)
            if uses_kl:
                snr = float(rng.uniform(*policy.noise_snr_range))
                noisy = mix_at_snr(ex.audio, noise_segment(noise_corpus, len(ex.audio), rng), snr)
                terms = combined_loss(rnnt, (front_end(ex.audio, rng), front_end(noisy, rng)), ex.labels, weights)
                loss = terms.total
                counter["step"] += 1
                pair_ids.append("s3s4")
                if run_logger:
                    run_logger.log_consistency(phase, counter["step"], "s3s4", terms.as_row())
            else:
                x = ex.audio
                if plan.noise:
                    x = mix_at_snr(x, noise_segment(noise_corpus, len(x), rng), plan.snr_db[position])
                loss = utterance_loss(rnnt, front_end(x, rng), ex.labels)
            total = loss if total is None else total + loss
        if uses_kl:
            plan.pair_id = " ".join(pair_ids)
        if run_logger:
            run_logger.log_augmentation(phase, epoch, batch, plan.as_row())
        return total / len(indices)

    recognizer = Recognizer(rnnt, vocabulary, dcrn=dcrn, max_symbols_per_frame=settings.max_symbols_per_frame)
    held_out = list(valid) if valid else list(corpus)

    def validate() -> Tuple[float, Optional[float]]:
        return validation_scores(recognizer, held_out)

    logger.info("%s: joint fine-tuning (noise=%s, kl=%s)", phase, options.augment_noise, options.kl_pairs)
    run_phase(phase, step, {"rnnt": rnnt, "dcrn": dcrn}, {}, sched, len(corpus), batch_loss, validate,
              settings, node)
    return rnnt, dcrn


class JointFinetunerNode(BaseNode):
    """
    Step 3 of a workflow: fine-tune copies of the step-2 transducer and the
    enhancer together. The step-2 models in state stay as they were.
    """

    def __init__(self, augment_noise: bool = False, kl_setting: Optional[str] = None,
                 source_key: str = "rnnt_step2"):
        super().__init__("joint_finetuner")
        self.augment_noise = augment_noise
        self.kl_setting = kl_setting
        self.source_key = source_key

    def validate_inputs(self, state: Dict[str, Any]):
        for key in (self.source_key, "dcrn"):
            if state.get(key) is None:
                raise ConfigError(f"joint fine-tuning needs '{key}' in the workflow state")

    def process(self, state: Dict[str, Any]) -> Dict[str, Any]:
        config = state["config"]
        settings = state["settings"]
        rnnt, dcrn = clone(state[self.source_key]), clone(state["dcrn"])
        options = JointOptions(
            augment_noise=self.augment_noise,
            kl_pairs=getattr(config.training, self.kl_setting) if self.kl_setting else "none",
        )
        fine_tune_joint(rnnt, dcrn, state["train_examples"], config.augment_policy(),
                        config.fine_tune(config.epochs.step3), options, settings, state["manifest"].vocabulary,
                        noise_corpus=state["manifest"].noise_waveforms("train"), valid=state["valid_examples"],
                        node=self)
        return {"rnnt_step3": rnnt, "dcrn_step3": dcrn, "phase_results": phase_records(settings)}
