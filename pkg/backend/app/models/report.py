# app/models/report.py
from pydantic import BaseModel, Field

from app.models.ledger import Address
from app.models.nn import EvalResult


class RoundGain(BaseModel):
    """Marginal loss reduction of one update against the round's global model."""
    update_id: int
    round: int
    author: Address
    gain: float


class ContractReport(BaseModel):
    """
    Scores for one contract. `tokens_by_round[author][r-1]` holds the tokens the
    author earned for round r (not cumulative). `global_evals[r-1]` measures the
    aggregate produced by round r on the evaluator's holdout (for the
    consortium main contract: the mean over the auxiliary evaluations).
    """
    contract_id: str
    evaluator: Address | None = None
    rounds: int = Field(ge=0)
    authors: list[Address] = Field(default_factory=list)
    gains: list[RoundGain] = Field(default_factory=list)
    tokens_by_round: dict[str, list[int]] = Field(default_factory=dict)
    global_evals: list[EvalResult] = Field(default_factory=list)
    final_eval: EvalResult | None = None
    shares: dict[str, float] = Field(default_factory=dict)

    def cumulative_tokens(self, author: str) -> list[int]:
        running, out = 0, []
        for tokens in self.tokens_by_round.get(author, []):
            running += tokens
            out.append(running)
        return out

    def total_tokens(self, author: str) -> int:
        return sum(self.tokens_by_round.get(author, []))

    def contributivity(self, author: str) -> float:
        """C(author): sum of the author's raw (signed) gains."""
        return sum(g.gain for g in self.gains if g.author == author)


class ContributivityReport(BaseModel):
    """All contract reports of one run; `primary_contract_id` names the one whose shares are final."""
    protocol: str
    primary_contract_id: str
    contracts: list[ContractReport] = Field(default_factory=list)

    def contract(self, contract_id: str) -> ContractReport:
        for report in self.contracts:
            if report.contract_id == contract_id:
                return report
        raise KeyError(contract_id)

    @property
    def primary(self) -> ContractReport:
        return self.contract(self.primary_contract_id)

    @property
    def final_shares(self) -> dict[str, float]:
        return dict(self.primary.shares)


class ReportRow(BaseModel):
    """One CSV line: contract_id, round, author, tokens_cumulative, share, global_loss, global_accuracy."""
    contract_id: str
    round: int
    author: Address
    tokens_cumulative: int
    share: float | None
    global_loss: float
    global_accuracy: float
