# nodes/__init__.py
from .corpus_loader import CorpusLoaderNode as CorpusLoaderNode
from .enhancer_trainer import EnhancerTrainerNode as EnhancerTrainerNode, train_enhancer as train_enhancer
from .asr_trainer import AsrOptions as AsrOptions, AsrTrainerNode as AsrTrainerNode, train_asr as train_asr
from .joint_finetuner import (
    JointFinetunerNode as JointFinetunerNode,
    JointOptions as JointOptions,
    fine_tune_joint as fine_tune_joint
)
from .selection_trainer import (
    SelectionPhases as SelectionPhases,
    SelectionTrainerNode as SelectionTrainerNode,
    train_selection as train_selection
)
from .evaluator import EvaluatorNode as EvaluatorNode, evaluate as evaluate
from .training_critic import training_critic_node as training_critic_node, should_continue as should_continue

__all__ = [
    'CorpusLoaderNode',
    'EnhancerTrainerNode',
    'train_enhancer',
    'AsrOptions',
    'AsrTrainerNode',
    'train_asr',
    'JointFinetunerNode',
    'JointOptions',
    'fine_tune_joint',
    'SelectionPhases',
    'SelectionTrainerNode',
    'train_selection',
    'EvaluatorNode',
    'evaluate',
    'training_critic_node',
    'should_continue'
]
