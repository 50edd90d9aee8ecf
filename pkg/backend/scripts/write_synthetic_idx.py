# backend/scripts/write_synthetic_idx.py
"""
Writes a small MNIST-shaped stand-in (train + t10k IDX files) so the CLI can be
exercised without downloading MNIST:

    python scripts/write_synthetic_idx.py ../data/synthetic
    python -m app.main run --data-dir ../data/synthetic --clients 3 --hidden 16
"""
import sys
import os

# Path Setup
script_dir = os.path.dirname(os.path.abspath(__file__))
backend_path = os.path.dirname(script_dir)
sys.path.append(backend_path)

from app.config import settings
from app.services.dataio import synthetic_dataset, write_idx

TRAIN_SIZE = 6000
TEST_SIZE = 1000


def write_synthetic(target_dir: str, side: int = 28) -> None:
    print(f"--- Writing synthetic IDX files ({side}x{side}) to {target_dir} ---")
    train = synthetic_dataset(TRAIN_SIZE, seed=1, side=side)
    test = synthetic_dataset(TEST_SIZE, seed=2, side=side)
    write_idx(train, os.path.join(target_dir, settings.TRAIN_IMAGES), os.path.join(target_dir, settings.TRAIN_LABELS))
    write_idx(test, os.path.join(target_dir, settings.TEST_IMAGES), os.path.join(target_dir, settings.TEST_LABELS))
    print(f"--- Success! Wrote {len(train)} train / {len(test)} test samples ---")


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else os.path.join(backend_path, "../data/synthetic")
    write_synthetic(target)
