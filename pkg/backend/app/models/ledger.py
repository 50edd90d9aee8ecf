# app/models/ledger.py
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, StringConstraints, TypeAdapter

# 20-byte identity / 32-byte sha256 digest, both lowercase hex
Address = Annotated[str, StringConstraints(pattern=r"^[0-9a-f]{40}$")]
Cid = Annotated[str, StringConstraints(pattern=r"^[0-9a-f]{64}$")]


class UpdateRecord(BaseModel):
    id: int = Field(ge=0)
    round: int = Field(ge=1)
    author: Address
    cid: Cid
    submitted_at: int = Field(ge=0)
    tokens: int | None = Field(default=None, ge=0)


# ==========================================
# TRANSACTIONS (one JSON line each in transactions.jsonl)
# ==========================================

class _Tx(BaseModel):
    model_config = ConfigDict(frozen=True)

    seq: int = Field(default=0, ge=0)
    at: int = Field(ge=0)


class DeployCrowdsourceTx(_Tx):
    kind: Literal["deploy_crowdsource"] = "deploy_crowdsource"
    contract_id: str
    evaluator: Address | None
    genesis: Cid
    round_duration: int
    trainers: tuple[Address, ...] | None = None


class DeployConsortiumTx(_Tx):
    kind: Literal["deploy_consortium"] = "deploy_consortium"
    consortium_id: str
    members: tuple[Address, ...]
    genesis: Cid
    round_duration: int


class SubmitUpdateTx(_Tx):
    kind: Literal["submit_update"] = "submit_update"
    contract_id: str
    update_id: int
    author: Address
    cid: Cid
    round: int


class SetTokensTx(_Tx):
    kind: Literal["set_tokens"] = "set_tokens"
    contract_id: str
    caller: Address
    update_id: int
    tokens: int = Field(ge=0)


class FinishTrainingTx(_Tx):
    kind: Literal["finish_training"] = "finish_training"
    contract_id: str


Transaction = Annotated[
    Union[DeployCrowdsourceTx, DeployConsortiumTx, SubmitUpdateTx, SetTokensTx, FinishTrainingTx],
    Field(discriminator="kind"),
]

transaction_adapter: TypeAdapter[Transaction] = TypeAdapter(Transaction)
