import json

import pytest

from utils.error_handler import (
    ConfigError,
    DataError,
    ErrorCategory,
    ErrorHandler,
    ErrorSeverity,
    FreezeViolationError,
    NumericalError,
    ShapeError,
    UsageError,
    error_handler,
    exit_code_for,
    handle_node_errors,
)


@pytest.mark.parametrize("error,code", [
    (UsageError("x"), 1),
    (ConfigError("x"), 1),
    (DataError("x"), 2),
    (ShapeError("x"), 2),
    (FileNotFoundError("x"), 2),
    (NumericalError("x"), 3),
    (FreezeViolationError("x"), 3),
    (ZeroDivisionError("x"), 3),
])
def test_exit_codes(error, code):
    assert exit_code_for(error) == code


def test_error_hierarchy():
    assert isinstance(ShapeError("x"), ValueError)
    assert isinstance(NumericalError("x"), ArithmeticError)
    assert issubclass(FreezeViolationError, NumericalError)


def test_classification_is_tracked(tmp_path):
    handler = ErrorHandler(str(tmp_path))
    context = handler.classify_error(DataError("bad manifest"), "load_corpus", {"split": "train"})
    assert context.category == ErrorCategory.DATA
    assert context.severity == ErrorSeverity.CRITICAL
    assert context.exit_code == 2

    handler.classify_error(KeyError("k"), "train_asr")
    summary = handler.get_error_summary()
    assert summary["total_errors"] == 2
    assert summary["by_severity"] == {"critical": 1, "recoverable": 1}
    assert summary["by_node"] == {"load_corpus": 1, "train_asr": 1}

    records = [json.loads(line) for line in (tmp_path / "error_tracking.jsonl").read_text().splitlines()]
    assert [r["node_name"] for r in records] == ["load_corpus", "train_asr"]
    assert records[0]["context_data"] == {"split": "train"}


def test_empty_summary(tmp_path):
    assert ErrorHandler(str(tmp_path)).get_error_summary()["total_errors"] == 0


def test_node_decorator(monkeypatch, tmp_path):
    monkeypatch.setattr(error_handler, "log_dir", str(tmp_path))

    @handle_node_errors("flaky")
    def flaky(state):
        raise KeyError("missing key")

    @handle_node_errors()
    def broken(state):
        raise NumericalError("loss is NaN")

    result = flaky({"run_name": "r1"})
    assert result["processing_errors"][0]["node_name"] == "flaky"
    assert result["processing_errors"][0]["context_data"]["run_name"] == "r1"
    with pytest.raises(NumericalError):
        broken({})
