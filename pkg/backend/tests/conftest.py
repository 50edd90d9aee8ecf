# backend/tests/conftest.py
import os
import sys

import pytest

# --- Path Setup ---
tests_dir = os.path.dirname(os.path.abspath(__file__))
backend_path = os.path.dirname(tests_dir)
sys.path.append(backend_path)

from app.config import settings
from app.services.cas import ContentStore
from app.services.dataio import synthetic_dataset
from app.services.ledger import Ledger


@pytest.fixture
def toy_train():
    """600 learnable 8x8 samples; shares its class prototypes with toy_test."""
    return synthetic_dataset(600, seed=1)


@pytest.fixture
def toy_test():
    return synthetic_dataset(200, seed=2)


@pytest.fixture
def store():
    return ContentStore()


@pytest.fixture
def ledger():
    return Ledger(start_time=100)


def mnist_available(data_dir: str | None = None) -> bool:
    data_dir = data_dir or settings.MNIST_DATA_DIR
    names = [settings.TRAIN_IMAGES, settings.TRAIN_LABELS, settings.TEST_IMAGES, settings.TEST_LABELS]
    return all(
        os.path.exists(os.path.join(data_dir, n)) or os.path.exists(os.path.join(data_dir, n + ".gz"))
        for n in names
    )
