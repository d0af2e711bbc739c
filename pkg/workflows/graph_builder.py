"""
Training workflows as LangGraph state graphs.

Three-step scheme::

    corpus -> enhancer -> step1 (ASR on original audio) -> step2 (ASR on enhanced
    audio, initialized from step1, enhancer frozen) -> critic -> step3 (joint
    fine-tuning) -> critic -> [selection] -> evaluation

Combined scheme: step1 is replaced by ASR training with noise, enhancement
and KL consistency; steps 2 and 3 then start from that augmented model and
may add noise and KL(s3, s4).
"""

import logging
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv
from langgraph.graph import END, StateGraph

from models.dcrn import EnhancementModel
from models.rnnt import RnntModel
from nodes.asr_trainer import AsrTrainerNode
from nodes.corpus_loader import CorpusLoaderNode
from nodes.enhancer_trainer import EnhancerTrainerNode
from nodes.evaluator import EvaluatorNode
from nodes.joint_finetuner import JointFinetunerNode
from nodes.selection_trainer import SelectionTrainerNode
from nodes.training_critic import should_continue, training_critic_node
from nodes.training_loop import TrainerSettings
from utils.corpus import CorpusManifest
from utils.error_handler import NumericalError, error_handler
from utils.feature_flags import feature_flags
from utils.output_organizer import OutputOrganizer
from utils.run_config import RunConfig
from utils.state_logger import finalize_logging, initialize_run_logger
from workflows.state import TrainingState, initial_state

logger = logging.getLogger(__name__)

SCHEMES = ("three-step", "combined")


def decide_after_fine_tune(state: TrainingState) -> str:
    """Stop on a failed critic, otherwise go to selection training when configured."""
    if should_continue(state) == "stop":
        return "stop"
    return "selection" if state["config"].training.use_selection else "evaluate"


def decide_selection_evaluation(state: TrainingState) -> str:
    return "evaluate_selection" if state.get("selection") is not None else "done"


def build_graph(scheme: str = "three-step"):
    """Builds and compiles the training workflow for one scheme."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme '{scheme}' (choose from {SCHEMES})")
    combined = scheme == "combined"
    workflow = StateGraph(TrainingState)

    if combined:
        first = AsrTrainerNode("augmented", step=1, output_key="rnnt_augmented", epochs="asr",
                               augment_noise=True, augment_enhance=True, with_enhancer=True, kl_setting="kl_pairs")
        first_key = "rnnt_augmented"
    else:
        first = AsrTrainerNode("step1", step=1, output_key="rnnt_step1", epochs="asr")
        first_key = "rnnt_step1"
    step2 = AsrTrainerNode("step2", step=2, output_key="rnnt_step2", epochs="step2", init_key=first_key,
                           augment_noise=combined, train_on_enhanced=True, with_enhancer=True,
                           kl_setting="combined_kl_pairs" if combined else None)
    step3 = JointFinetunerNode(augment_noise=combined, kl_setting="combined_kl_pairs" if combined else None)

    workflow.add_node("corpus_loader", CorpusLoaderNode())
    workflow.add_node("enhancer_trainer", EnhancerTrainerNode())
    workflow.add_node("asr_first", first)
    workflow.add_node("asr_step2", step2)
    workflow.add_node("critic_step2", training_critic_node)
    workflow.add_node("joint_finetuner", step3)
    workflow.add_node("critic_step3", training_critic_node)
    workflow.add_node("selection_trainer", SelectionTrainerNode())
    workflow.add_node("evaluate_first", EvaluatorNode(first_key, label=f"eval_{first.phase}"))
    workflow.add_node("evaluate_step3", EvaluatorNode("rnnt_step3", dcrn_key="dcrn_step3", label="eval_step3"))
    workflow.add_node("evaluate_selection", EvaluatorNode("rnnt_selection", dcrn_key="dcrn_step3",
                                                          selection_key="selection", label="eval_selection"))

    workflow.set_entry_point("corpus_loader")
    workflow.add_edge("corpus_loader", "enhancer_trainer")
    workflow.add_edge("enhancer_trainer", "asr_first")
    workflow.add_edge("asr_first", "asr_step2")
    workflow.add_edge("asr_step2", "critic_step2")
    workflow.add_conditional_edges(
        "critic_step2",
        should_continue,
        {
            "continue": "joint_finetuner",
            "stop": END
        }
    )
    workflow.add_edge("joint_finetuner", "critic_step3")
    workflow.add_conditional_edges(
        "critic_step3",
        decide_after_fine_tune,
        {
            "selection": "selection_trainer",
            "evaluate": "evaluate_first",
            "stop": END
        }
    )
    workflow.add_edge("selection_trainer", "evaluate_first")
    workflow.add_edge("evaluate_first", "evaluate_step3")
    workflow.add_conditional_edges(
        "evaluate_step3",
        decide_selection_evaluation,
        {
            "evaluate_selection": "evaluate_selection",
            "done": END
        }
    )
    workflow.add_edge("evaluate_selection", END)
    return workflow.compile()


def start_run(config: RunConfig) -> TrainerSettings:
    """Create the run directory, attach run logging and return trainer settings wired to both."""
    load_dotenv()
    run_dir = config.run_dir
    run_logger = initialize_run_logger(str(run_dir))
    run_logger.log_event("features", **feature_flags.log_feature_states())
    error_handler.set_log_dir(str(run_dir))
    organizer = OutputOrganizer(str(run_dir))
    organizer.create_run_directory(config.name, config.model_dump(mode="json"))
    return TrainerSettings.from_run_config(config, run_logger, organizer)


def run_workflow(config: RunConfig, scheme: str = "three-step",
                 manifest: Optional[CorpusManifest] = None) -> Dict[str, Any]:
    """
    Run one scheme end to end under ``config.run_dir`` and return the final state.

    The run directory receives metadata.json, workflow.log, errors.log, one
    CSV per phase and table, checkpoints per step and run_summary.json.
    """
    settings = start_run(config)
    run_logger = settings.run_logger

    status = "failed"
    try:
        final = build_graph(scheme).invoke(initial_state(config, settings, manifest))
        stopped = any(not r["is_valid"] for r in final.get("critic_results", {}).values())
        status = "stopped" if stopped else "completed"
        final["workflow_status"] = status
        return final
    except Exception as exc:
        run_logger.log_error(f"{scheme} workflow failed", exc)
        raise
    finally:
        finalize_logging({"scheme": scheme, "status": status,
                          "phases": [r.phase for r in settings.phase_results]})


def _failed_checks(state: Dict[str, Any]) -> str:
    failed = [key for key, r in state.get("critic_results", {}).items() if not r["is_valid"]]
    return ", ".join(failed) or "no critic failure recorded"


def three_step_train(config: RunConfig,
                     manifest: Optional[CorpusManifest] = None) -> Tuple[RnntModel, EnhancementModel]:
    """Three-step workflow; returns the step-3 transducer and enhancer."""
    final = run_workflow(config, "three-step", manifest)
    if final.get("rnnt_step3") is None:
        raise NumericalError(f"workflow {final['workflow_status']} before step 3: {_failed_checks(final)}")
    return final["rnnt_step3"], final["dcrn_step3"]


def combined_train(config: RunConfig, manifest: Optional[CorpusManifest] = None) -> Dict[str, Any]:
    """Augmentation + enhancement front end; returns every model the run produced, by state key."""
    final = run_workflow(config, "combined", manifest)
    if final.get("rnnt_step3") is None:
        raise NumericalError(f"workflow {final['workflow_status']} before step 3: {_failed_checks(final)}")
    keys = ("rnnt_augmented", "dcrn", "rnnt_step2", "rnnt_step3", "dcrn_step3", "selection", "rnnt_selection")
    return {key: final[key] for key in keys if final.get(key) is not None}
