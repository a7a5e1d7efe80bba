from __future__ import annotations

import pytest

from toolstream.corpus import load_corpus, partition_blocks
from toolstream.fixtures import (
    REFERENCE_SEED,
    REFERENCE_T,
    write_reference_fixture,
)


@pytest.fixture(scope="session")
def reference_paths(tmp_path_factory):
    out = tmp_path_factory.mktemp("reference_fixture")
    return write_reference_fixture(out)


@pytest.fixture(scope="session")
def reference_blocks(reference_paths):
    episodes = load_corpus(reference_paths["corpus"])
    blocks = partition_blocks(episodes, REFERENCE_T, REFERENCE_SEED)
    index = {ex.id: ex for block in blocks for ex in block.examples}
    return episodes, blocks, index
