import numpy as np
import pytest

from entloss import synth
from entloss.data import Split


@pytest.fixture(scope="session")
def small_letters():
    """2000-sample synthetic letters set, shared across tests."""
    return synth.letters_dataset(2000, seed=42)


@pytest.fixture(scope="session")
def tiny_letters():
    """600-sample set for fast trainer tests."""
    return synth.letters_dataset(600, seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def idx_files(tmp_path_factory):
    """Small gzipped IDX pair on disk (train + test share prototypes)."""
    root = tmp_path_factory.mktemp("idx")
    train = synth.write_letters_idx(root, 300, seed=9, stem="letters-train",
                                    sample_stream=0)
    test = synth.write_letters_idx(root, 120, seed=9, stem="letters-test",
                                   sample_stream=1)
    return {"dir": root, "train": train, "test": test}
