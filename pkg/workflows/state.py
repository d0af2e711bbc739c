from typing import TypedDict, List, Dict, Any, Optional

from models.dcrn import EnhancementModel
from models.rnnt import RnntModel
from models.selection import SelectionModel
from nodes.training_loop import Example, TrainerSettings
from utils.corpus import CorpusManifest
from utils.run_config import RunConfig


class NodeRecord(TypedDict):
    """One entry of the node execution history."""
    node: str
    status: str
    duration: float
    timestamp: str


class TrainingState(TypedDict, total=False):
    """The central state object shared by the training graphs."""

    # Inputs
    config: RunConfig
    settings: TrainerSettings
    manifest: Optional[CorpusManifest]

    # Loaded data
    train_examples: List[Example]
    valid_examples: List[Example]

    # Models, keyed by the step that produced them
    dcrn: Optional[EnhancementModel]
    rnnt_step1: Optional[RnntModel]
    rnnt_augmented: Optional[RnntModel]  # combined scheme: noise + SE + KL
    rnnt_step2: Optional[RnntModel]
    rnnt_step3: Optional[RnntModel]
    dcrn_step3: Optional[EnhancementModel]
    selection: Optional[SelectionModel]
    rnnt_selection: Optional[RnntModel]

    # Results
    enhancer_sweep: List[Dict[str, Any]]
    phase_results: List[Dict[str, Any]]  # PhaseResult.as_dict() of every finished phase
    critic_results: Dict[str, Dict[str, Any]]
    evaluations: Dict[str, List[Dict[str, Any]]]  # label -> summary rows

    # Bookkeeping
    node_execution_history: List[NodeRecord]
    processing_errors: List[Dict[str, Any]]
    workflow_status: str


def initial_state(config: RunConfig, settings: TrainerSettings,
                  manifest: Optional[CorpusManifest] = None) -> TrainingState:
    return TrainingState(
        config=config,
        settings=settings,
        manifest=manifest,
        phase_results=[],
        critic_results={},
        evaluations={},
        node_execution_history=[],
        processing_errors=[],
        workflow_status="running",
    )
