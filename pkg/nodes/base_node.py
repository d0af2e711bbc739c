#!/usr/bin/env python3
"""
Base Node Class

Common interface for the training workflow nodes: status lines on the
console, the same lines in workflow.log, a per-node execution record in the
workflow state and threaded batch assembly.
"""

import logging
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

from utils.feature_flags import get_feature_config, is_feature_enabled

logger = logging.getLogger(__name__)

Item = TypeVar("Item")
Result = TypeVar("Result")


class NodeStatus(Enum):
    """Node execution statuses"""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    SKIPPED = "skipped"


STATUS_ICONS = {
    NodeStatus.RUNNING: "🔄",
    NodeStatus.COMPLETED: "✅",
    NodeStatus.FAILED: "❌",
    NodeStatus.SKIPPED: "⏭️",
}


class BaseNode(ABC):
    """
    Abstract base class for all workflow nodes.

    Subclasses implement ``process``; ``execute`` wraps it with status
    reporting, input validation and the execution record.
    """

    def __init__(self, node_name: Optional[str] = None):
        self.node_name = node_name or self.__class__.__name__
        self.start_time: Optional[float] = None
        self.status = NodeStatus.PENDING
        self.error_message: Optional[str] = None

    def report_progress(self, message: str, progress: Optional[float] = None,
                        status: Optional[NodeStatus] = None):
        """Print a status line and log it; ``progress`` is a fraction in [0, 1]."""
        if status:
            self.status = status
        progress_str = f" ({progress * 100:.0f}%)" if progress is not None else ""
        icon = STATUS_ICONS.get(self.status, "⏳")
        print(f"{icon} [{self.node_name}] {message}{progress_str}")
        level = logging.ERROR if self.status == NodeStatus.FAILED else logging.INFO
        logger.log(level, "[%s] %s%s", self.node_name, message, progress_str)

    def report_subtask(self, task_name: str, current: int, total: int, message: Optional[str] = None):
        """Progress of a subtask, e.g. the epochs of a phase."""
        msg = f"{task_name}: {current}/{total}"
        if message:
            msg += f" - {message}"
        self.report_progress(msg, progress=current / total if total > 0 else 0.0)

    def _record(self, state: Dict[str, Any], duration: float) -> List[Dict[str, Any]]:
        return list(state.get('node_execution_history', [])) + [{
            'node': self.node_name,
            'status': self.status.value,
            'duration': duration,
            'timestamp': datetime.now().isoformat(),
        }]

    def __call__(self, state: Dict[str, Any]) -> Dict[str, Any]:
        return self.execute(state)

    def execute(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """
        Run the node on the workflow state and return its state updates.

        Errors are reported and re-raised: a failed training step leaves
        nothing sensible for the steps after it.
        """
        self.start_time = time.time()
        if self.should_skip(state):
            self.report_progress("Skipped", status=NodeStatus.SKIPPED)
            return {'node_execution_history': self._record(state, 0.0)}

        self.report_progress(f"Starting {self.node_name}", progress=0.0, status=NodeStatus.RUNNING)
        try:
            self.validate_inputs(state)
            updates = self.process(state)
        except Exception as e:
            self.error_message = str(e)
            self.report_progress(f"Failed: {str(e)[:100]}", status=NodeStatus.FAILED)
            raise

        duration = time.time() - self.start_time
        self.report_progress(f"Completed in {duration:.1f}s", progress=1.0, status=NodeStatus.COMPLETED)
        updates['node_execution_history'] = self._record(state, duration)
        return updates

    @abstractmethod
    def process(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Node logic; returns the state keys to update."""

    def should_skip(self, state: Dict[str, Any]) -> bool:
        return False

    def validate_inputs(self, state: Dict[str, Any]):
        """Raise if required inputs are missing from state."""
        return None


def batch_workers(threads: int) -> int:
    """Worker threads for batch assembly: 1 unless parallel_batches is on."""
    if not is_feature_enabled('parallel_batches'):
        return 1
    cap = int(get_feature_config('parallel_batches').get('max_workers', threads) or threads)
    return max(1, min(threads, cap))


def assemble_batch(items: Sequence[Item], build: Callable[[Item], Result], threads: int = 1) -> List[Result]:
    """
    Run ``build`` over the items of one batch, in order.

    Workers only prepare inputs (augmentation, enhancement, features); every
    item draws from its own random stream, so the result does not depend on
    the worker count.
    """
    workers = batch_workers(threads)
    if workers <= 1 or len(items) <= 1:
        return [build(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(build, items))
