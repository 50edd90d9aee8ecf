# app/models/__init__.py
from app.models.nn import Architecture, ModelParams, TrainingConfig, EvalResult
from app.models.dataset import Dataset, EqualRandom, RatioRandom, WithFlip, SplitSpec, NUM_CLASSES
from app.models.ledger import (
    Address, Cid, UpdateRecord, Transaction, transaction_adapter,
    DeployCrowdsourceTx, DeployConsortiumTx, SubmitUpdateTx, SetTokensTx, FinishTrainingTx,
)
from app.models.report import RoundGain, ContractReport, ContributivityReport, ReportRow
from app.models.experiment import (
    Honest, LabelFlipper, ClientSpec, ExperimentConfig, ClientPlan, ExperimentPlan,
    HoldoutFiles, RunManifest,
)
