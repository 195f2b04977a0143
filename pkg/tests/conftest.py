import shutil
import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).parent
FIXTURE_TOPIC = TESTS / "fixtures" / "topic"
FIXTURE_REPO = FIXTURE_TOPIC / "repos" / "langchain"

# make the shared oracles importable as a plain module
sys.path.insert(0, str(TESTS))


@pytest.fixture
def topic_dir(tmp_path):
    """A private copy of the fixture topic (without any previous output)."""
    dst = tmp_path / "topic"
    shutil.copytree(FIXTURE_TOPIC, dst, ignore=shutil.ignore_patterns("out", "__pycache__"))
    return dst

# sha256 over (relative path, file sha256) of every file the fixture pipeline
# writes. Regenerate deliberately when an output format or the mock changes.
GOLDEN_TREE_HASH = "19cdc42baabf395b51ade4dc3a8c3f7cbf6e531c39aa86a3da7feb0a0327060f"

# Worked example pinned by the mock fixture: one question, one of its nuggets
# and the single-chunk document that supports it.
PINNED_QUESTION = "78256389"
PINNED_DOC = "langchain/templates/intel-rag-xeon/ingest.py_0_1486"
PINNED_NUGGET = "Use `HuggingFaceEmbeddings` instead of `SentenceTransformerEmbeddings` to resolve the error."


def output_tree_hash(root):
    import hashlib

    parts = []
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            parts.append(f"{p.relative_to(root).as_posix()}\0{hashlib.sha256(p.read_bytes()).hexdigest()}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()
