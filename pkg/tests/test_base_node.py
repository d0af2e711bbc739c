import threading

import pytest

from nodes.base_node import BaseNode, NodeStatus, assemble_batch
from utils.error_handler import DataError


class Doubler(BaseNode):
    def process(self, state):
        return {"value": state["value"] * 2}


class Broken(BaseNode):
    def validate_inputs(self, state):
        if "value" not in state:
            raise DataError("no value")

    def process(self, state):
        return {}


class AlreadyDone(Doubler):
    def should_skip(self, state):
        return True


def test_execute_records_history(capsys):
    node = Doubler()
    updates = node({"value": 3, "node_execution_history": [{"node": "earlier"}]})
    assert updates["value"] == 6
    assert [r["node"] for r in updates["node_execution_history"]] == ["earlier", "Doubler"]
    assert updates["node_execution_history"][-1]["status"] == "completed"
    assert node.status == NodeStatus.COMPLETED
    assert "✅ [Doubler] Completed" in capsys.readouterr().out


def test_failures_are_reported_and_raised(capsys):
    node = Broken("broken_node")
    with pytest.raises(DataError):
        node({})
    assert node.status == NodeStatus.FAILED
    assert node.error_message == "no value"
    assert "❌ [broken_node] Failed: no value" in capsys.readouterr().out


def test_skipped_node_returns_only_history():
    updates = AlreadyDone()({"value": 1})
    assert set(updates) == {"node_execution_history"}
    assert updates["node_execution_history"][0]["status"] == "skipped"


def test_assemble_batch_keeps_order():
    threads = set()

    def build(item):
        threads.add(threading.get_ident())
        return item * item

    assert assemble_batch(list(range(10)), build, threads=1) == [i * i for i in range(10)]
    assert assemble_batch(list(range(10)), build, threads=4) == [i * i for i in range(10)]
    assert assemble_batch([], build, threads=4) == []
