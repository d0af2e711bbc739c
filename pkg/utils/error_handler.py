"""
Error classification and handling for the enhancement/recognition pipeline.

Exceptions raised anywhere in the package derive from ``SpeechPipelineError``
and carry an ``ErrorCategory``. The handler turns them into structured
``ErrorContext`` records, appends them to ``error_tracking.jsonl`` and maps
them onto the command-line exit codes.
"""

import os
import json
import time
import logging
from enum import Enum
from typing import Dict, Any, Callable, List, Optional
from dataclasses import dataclass, asdict, field
from datetime import datetime
from functools import wraps


class ErrorSeverity(Enum):
    """Error severity levels for classification."""
    CRITICAL = "critical"        # Stop the workflow
    RECOVERABLE = "recoverable"  # Node may be skipped
    WARNING = "warning"          # Continue, but record


class ErrorCategory(Enum):
    """Categories of errors for appropriate handling."""
    USAGE = "usage"
    CONFIGURATION = "configuration"
    DATA = "data"
    SHAPE = "shape"
    FILE_IO = "file_io"
    NUMERICAL = "numerical"


EXIT_CODES = {
    ErrorCategory.USAGE: 1,
    ErrorCategory.CONFIGURATION: 1,
    ErrorCategory.DATA: 2,
    ErrorCategory.SHAPE: 2,
    ErrorCategory.FILE_IO: 2,
    ErrorCategory.NUMERICAL: 3,
}


class SpeechPipelineError(Exception):
    """Base class for all errors raised by this package."""
    category = ErrorCategory.DATA


class UsageError(SpeechPipelineError):
    category = ErrorCategory.USAGE


class ConfigError(SpeechPipelineError):
    category = ErrorCategory.CONFIGURATION


class DataError(SpeechPipelineError):
    category = ErrorCategory.DATA


class ShapeError(SpeechPipelineError, ValueError):
    """Operand shapes do not conform to an operation's rule."""
    category = ErrorCategory.SHAPE


class NumericalError(SpeechPipelineError, ArithmeticError):
    """NaN, infinity or divergence detected."""
    category = ErrorCategory.NUMERICAL


class FreezeViolationError(NumericalError):
    """A parameter group marked frozen changed during a phase."""


@dataclass
class ErrorContext:
    """Error context for tracking."""
    error_id: str
    timestamp: str
    node_name: str
    error_type: str
    error_message: str
    severity: ErrorSeverity
    category: ErrorCategory
    exit_code: int
    context_data: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for logging/serialization."""
        result = asdict(self)
        result['severity'] = self.severity.value
        result['category'] = self.category.value
        return result


def categorize(error: BaseException) -> ErrorCategory:
    """Determine the category of an arbitrary exception."""
    if isinstance(error, SpeechPipelineError):
        return error.category
    error_type = type(error).__name__
    if error_type in ('FileNotFoundError', 'PermissionError', 'IsADirectoryError', 'OSError'):
        return ErrorCategory.FILE_IO
    if error_type in ('FloatingPointError', 'OverflowError', 'ZeroDivisionError'):
        return ErrorCategory.NUMERICAL
    if error_type == 'ValidationError':
        return ErrorCategory.CONFIGURATION
    return ErrorCategory.DATA


def exit_code_for(error: BaseException) -> int:
    """CLI exit code for an exception: 1 usage, 2 data, 3 numerical."""
    return EXIT_CODES[categorize(error)]


class ErrorHandler:
    """Classifies errors and keeps a per-process history."""

    def __init__(self, log_dir: Optional[str] = None):
        if log_dir is None:
            log_dir = os.getenv('SERNNT_RUNS_DIR', 'runs')
        self.log_dir = log_dir
        self.error_history: List[ErrorContext] = []
        self.logger = logging.getLogger('error_handler')

    def set_log_dir(self, log_dir: str):
        """Redirect the error tracking file (normally into the active run directory)."""
        self.log_dir = log_dir

    def classify_error(self, error: BaseException, node_name: str,
                       context_data: Optional[Dict[str, Any]] = None) -> ErrorContext:
        """Classify an error and create an error context."""
        category = categorize(error)
        severity = self._determine_severity(error, category)
        error_context = ErrorContext(
            error_id=f"{node_name}_{int(time.time())}_{len(self.error_history)}",
            timestamp=datetime.now().isoformat(),
            node_name=node_name,
            error_type=type(error).__name__,
            error_message=str(error),
            severity=severity,
            category=category,
            exit_code=EXIT_CODES[category],
            context_data=context_data or {},
        )
        self.error_history.append(error_context)
        self._log_error(error_context)
        return error_context

    def _determine_severity(self, error: BaseException, category: ErrorCategory) -> ErrorSeverity:
        if category in (ErrorCategory.NUMERICAL, ErrorCategory.CONFIGURATION,
                        ErrorCategory.USAGE, ErrorCategory.SHAPE):
            return ErrorSeverity.CRITICAL
        if category == ErrorCategory.FILE_IO:
            return ErrorSeverity.CRITICAL
        if isinstance(error, SpeechPipelineError):
            return ErrorSeverity.CRITICAL
        return ErrorSeverity.RECOVERABLE

    def handle_error(self, error: BaseException, node_name: str,
                     context_data: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Classify an error and decide whether the workflow must stop."""
        error_context = self.classify_error(error, node_name, context_data)
        if error_context.severity == ErrorSeverity.CRITICAL:
            return {
                "success": False,
                "action": "stop_processing",
                "error_context": error_context.to_dict(),
                "message": f"Critical error in {node_name}: {error_context.error_message}",
            }
        return {
            "success": False,
            "action": "skip_node",
            "error_context": error_context.to_dict(),
            "message": f"Recoverable error in {node_name}: {error_context.error_message}",
        }

    def _log_error(self, error_context: ErrorContext):
        self.logger.error(json.dumps(error_context.to_dict()))
        try:
            os.makedirs(self.log_dir, exist_ok=True)
            tracking_file = os.path.join(self.log_dir, 'error_tracking.jsonl')
            with open(tracking_file, 'a', encoding='utf-8') as f:
                f.write(json.dumps(error_context.to_dict()) + '\n')
        except OSError:
            # The tracking file is best effort; the logger already has the record.
            pass

    def get_error_summary(self) -> Dict[str, Any]:
        """Summary of errors encountered during processing."""
        if not self.error_history:
            return {"total_errors": 0, "summary": "No errors encountered"}

        summary: Dict[str, Any] = {
            "total_errors": len(self.error_history),
            "by_severity": {},
            "by_category": {},
            "by_node": {},
        }
        for error in self.error_history:
            for key, value in (("by_severity", error.severity.value),
                               ("by_category", error.category.value),
                               ("by_node", error.node_name)):
                summary[key][value] = summary[key].get(value, 0) + 1
        return summary


# Global error handler instance
error_handler = ErrorHandler()


def handle_node_errors(node_name: Optional[str] = None):
    """Decorator recording errors raised by workflow node functions."""
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            actual_node_name = node_name or func.__name__
            try:
                return func(*args, **kwargs)
            except Exception as e:
                context_data = {}
                if args and hasattr(args[0], 'get'):
                    context_data = {
                        "run_name": args[0].get("run_name"),
                        "current_step": actual_node_name,
                    }
                result = error_handler.handle_error(e, actual_node_name, context_data)
                if result.get("action") == "stop_processing":
                    raise
                return {"processing_errors": [result["error_context"]]}
        return wrapper
    return decorator
