# app/config.py
import os
from pydantic_settings import BaseSettings, SettingsConfigDict

# Get the project root directory (one level above backend/)
_BASE_DIR = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), ".env"),
        extra="ignore",
    )

    # App Config
    APP_NAME: str = "Contributivity Ledger Simulator"
    APP_VERSION: str = "0.3.0"
    LOG_LEVEL: str = "INFO"

    # MNIST location. The CLI --data-dir flag wins over this.
    MNIST_DATA_DIR: str = os.path.join(_BASE_DIR, "data/mnist")
    TRAIN_IMAGES: str = "train-images-idx3-ubyte"
    TRAIN_LABELS: str = "train-labels-idx1-ubyte"
    TEST_IMAGES: str = "t10k-images-idx3-ubyte"
    TEST_LABELS: str = "t10k-labels-idx1-ubyte"

    # Run outputs (report.csv, transactions.jsonl, manifest.json, cas/, holdouts/)
    OUTPUT_DIR: str = os.path.join(_BASE_DIR, "data/runs")
    EXPERIMENTS_DIR: str = os.path.join(_BASE_DIR, "data/experiments")

    # Model. Comma separated hidden layer widths; input/output come from the data.
    HIDDEN_LAYERS: str = "128"

    # Training defaults ("1 epoch, with a batch size of 32 and a learning rate of 0.01")
    ROUNDS: int = 5
    EPOCHS_PER_ROUND: int = 1
    BATCH_SIZE: int = 32
    LEARNING_RATE: float = 0.01

    # Ledger / contributivity
    ROUND_DURATION: int = 60  # logical seconds per training round
    START_TIME: int = 0       # logical deployment time
    TOKEN_SCALE: float = 1e6  # tokens per unit of loss reduction

    # Worker threads per round barrier. 1 = sequential.
    MAX_WORKERS: int = 1

    @property
    def hidden_layers(self) -> tuple[int, ...]:
        return tuple(int(part) for part in self.HIDDEN_LAYERS.split(",") if part.strip())

settings = Settings()
