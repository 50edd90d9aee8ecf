# app/models/experiment.py
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.dataset import Dataset
from app.models.ledger import Address
from app.models.nn import EvalResult, TrainingConfig

Protocol = Literal["crowdsource", "consortium"]


# ==========================================
# 1. CLIENTS
# ==========================================

class Honest(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["honest"] = "honest"


class LabelFlipper(BaseModel):
    """Corrupts its own labels once before training, then follows the protocol honestly."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["label_flipper"] = "label_flipper"
    p: float = Field(ge=0, le=1)
    seed: int = Field(default=0, ge=0)


Behavior = Annotated[Union[Honest, LabelFlipper], Field(discriminator="kind")]


class ClientSpec(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    address: Address
    dataset: Dataset
    behavior: Behavior = Field(default_factory=Honest)


# ==========================================
# 2. IN-MEMORY EXPERIMENT
# ==========================================

class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    protocol: Protocol
    clients: list[ClientSpec]
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    hidden_layers: tuple[int, ...] = (128,)
    round_duration: int = Field(default=60, gt=0)
    token_scale: float = Field(default=1e6, gt=0)
    holdout: Dataset | None = None
    subsample: float | None = Field(default=None, gt=0, le=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    start_time: int = Field(default=0, ge=0)
    max_workers: int = Field(default=1, ge=1)
    evaluator_name: str = "evaluator"

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if len(self.clients) < 2:
            raise ValueError(f"{self.protocol} needs at least 2 clients, got {len(self.clients)}")
        addresses = [c.address for c in self.clients]
        if len(set(addresses)) != len(addresses):
            raise ValueError("client addresses must be unique")
        if self.protocol == "crowdsource" and (self.holdout is None or len(self.holdout) == 0):
            raise ValueError("crowdsource needs a non-empty holdout set")
        return self


# ==========================================
# 3. DECLARATIVE PLAN (JSON file / CLI flags)
# ==========================================

class ClientPlan(BaseModel):
    name: str
    ratio: int = Field(default=1, gt=0)
    flip: float = Field(default=0.0, ge=0, le=1)


class ExperimentPlan(BaseModel):
    """
    Flat key/values plus a client list. See data/experiments/*.json.
    Unset values fall back to app.config.settings.
    """
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    protocol: Protocol = "crowdsource"
    data_dir: str | None = None
    clients: list[ClientPlan]
    rounds: int | None = Field(default=None, gt=0)
    epochs_per_round: int | None = Field(default=None, gt=0)
    batch_size: int | None = Field(default=None, gt=0)
    learning_rate: float | None = Field(default=None, ge=0)
    hidden_layers: tuple[int, ...] | None = None
    round_duration: int | None = Field(default=None, gt=0)
    token_scale: float | None = Field(default=None, gt=0)
    subsample: float | None = Field(default=None, gt=0, le=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    max_workers: int | None = Field(default=None, ge=1)

    @field_validator("clients")
    @classmethod
    def _unique_names(cls, clients: list[ClientPlan]) -> list[ClientPlan]:
        if len(clients) < 2:
            raise ValueError("a plan needs at least 2 clients")
        names = [c.name for c in clients]
        if len(set(names)) != len(names):
            raise ValueError(f"client names must be unique, got {names}")
        if "evaluator" in names:
            raise ValueError("'evaluator' is reserved for the crowdsource evaluator")
        return clients


# ==========================================
# 4. RUN MANIFEST (manifest.json)
# ==========================================

class HoldoutFiles(BaseModel):
    images: str
    labels: str


class RunManifest(BaseModel):
    app_version: str
    plan: ExperimentPlan
    protocol: Protocol
    seed: int
    token_scale: float
    primary_contract_id: str
    consortium_id: str | None = None
    report_csv: str = "report.csv"
    transactions: str = "transactions.jsonl"
    cas_dir: str = "cas"
    holdouts: dict[str, HoldoutFiles] = Field(default_factory=dict)
    client_addresses: dict[str, Address] = Field(default_factory=dict)
    final_shares: dict[str, float] = Field(default_factory=dict)
    # contract id -> cid of the aggregate its last round produced
    final_models: dict[str, str] = Field(default_factory=dict)
    test_eval: EvalResult | None = None
    wall_clock_seconds: float = 0.0
