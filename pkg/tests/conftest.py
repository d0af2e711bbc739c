import os
import sys

import pytest

# Ensure the repository packages (`models`, `nodes`, `utils`, ...) are importable in tests
ROOT = os.path.dirname(os.path.abspath(__file__))
REPO_ROOT = os.path.dirname(ROOT)
if REPO_ROOT not in sys.path:
    sys.path.insert(0, REPO_ROOT)

from utils.corpus import synth_corpus  # noqa: E402
from utils.run_config import load_run_config  # noqa: E402
from utils.state_logger import finalize_logging  # noqa: E402


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Eight synthetic utterances over a two-symbol vocabulary, shared by the session."""
    root = tmp_path_factory.mktemp("corpus")
    return synth_corpus(8, 2, 0, root, length_range=(1, 2), noise_seconds=1.0)


@pytest.fixture
def tiny_config(tiny_corpus, tmp_path):
    root = tiny_corpus.root
    return load_run_config(
        preset="tiny",
        overrides=[f"corpus.path={root}", f"runs_dir={tmp_path / 'runs'}"],
    )


@pytest.fixture(autouse=True)
def _close_run_logger():
    yield
    finalize_logging()
