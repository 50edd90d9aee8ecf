# app/services/contributivity.py
"""
Step-by-step evaluation. For an update u submitted in round i:

    gain(u) = loss(global_model_at(i), holdout) - loss(model(u), holdout)

so a client's contributivity is the sum of its gains over all rounds. Gains
convert to unsigned tokens; negative gains earn nothing.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from app.exceptions import (
    DimensionMismatchError,
    NotEvaluatorError,
    TokensAlreadySetError,
    TrainingNotFinishedError,
    UnfinishedContractError,
)
from app.models.dataset import Dataset
from app.models.nn import EvalResult, ModelParams
from app.models.report import ContractReport, ContributivityReport, RoundGain
from app.services.cas import ContentStore
from app.services.ledger import ConsortiumContract, CrowdsourceContract
from app.services.nnmodel import deserialize, evaluate

logger = logging.getLogger(__name__)


# ==========================================
# 1. GLOBAL MODELS
# ==========================================

def load_model(store: ContentStore, cid: str) -> ModelParams:
    return deserialize(store.get(cid))


def aggregate(models: list[ModelParams]) -> ModelParams:
    """Federated averaging: elementwise mean of the parameter vectors, in the given order."""
    if not models:
        raise ValueError("cannot aggregate an empty list of models")
    arch = models[0].arch
    for m in models[1:]:
        if m.arch != arch:
            raise DimensionMismatchError(f"cannot average {m.arch} with {arch}")
    return ModelParams(arch=arch, weights=np.mean(np.stack([m.weights for m in models]), axis=0))


def global_history(contract: CrowdsourceContract, store: ContentStore, through_round: int) -> list[ModelParams]:
    """[global_model_at(1), ..., global_model_at(through_round)]."""
    if through_round < 1:
        raise ValueError(f"rounds start at 1, got {through_round}")
    history = [load_model(store, contract.genesis)]
    for r in range(2, through_round + 1):
        updates = contract.updates_in_round(r - 1)
        if updates:
            history.append(aggregate([load_model(store, u.cid) for u in updates]))
        else:
            # an empty round carries the previous global model forward
            history.append(history[-1])
    return history


def global_model_at(contract: CrowdsourceContract, round_: int, store: ContentStore) -> ModelParams:
    """Genesis for round 1, else the mean of the round-(r-1) updates in address order."""
    return global_history(contract, store, round_)[-1]


def final_model(contract: CrowdsourceContract, store: ContentStore) -> ModelParams:
    """The aggregate produced by the contract's last round."""
    return global_model_at(contract, contract.final_round + 1, store)


# ==========================================
# 2. GAINS AND TOKENS
# ==========================================

def tokens_from_gain(gain: float, scale: float) -> int:
    if scale <= 0:
        raise ValueError(f"token scale must be positive, got {scale}")
    return int(math.floor(scale * max(0.0, gain) + 0.5))


def _score(contract: CrowdsourceContract, holdout: Dataset, store: ContentStore,
           max_workers: int) -> tuple[list[RoundGain], list[EvalResult]]:
    """
    Gains for every update (round, then author order) and holdout evaluations of
    global_model_at(1..final_round+1).
    """
    if not contract.training_finished:
        raise TrainingNotFinishedError(f"{contract.contract_id}: training is still open")
    if len(holdout) == 0:
        raise ValueError("holdout set is empty")

    rounds = contract.final_round
    history = global_history(contract, store, rounds + 1)
    updates = [u for r in range(1, rounds + 1) for u in contract.updates_in_round(r)]

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        global_evals = list(pool.map(lambda m: evaluate(m, holdout), history))
        update_evals = list(pool.map(lambda u: evaluate(load_model(store, u.cid), holdout), updates))

    gains = [
        RoundGain(update_id=u.id, round=u.round, author=u.author, gain=global_evals[u.round - 1].loss - ev.loss)
        for u, ev in zip(updates, update_evals)
    ]
    return gains, global_evals


def step_gains(contract: CrowdsourceContract, holdout: Dataset, store: ContentStore,
               max_workers: int = 1) -> list[RoundGain]:
    """Signed gain of every update against the global model it was trained from."""
    gains, _ = _score(contract, holdout, store, max_workers)
    return gains


def _assemble(contract: CrowdsourceContract, gains: list[RoundGain], global_evals: list[EvalResult]) -> ContractReport:
    rounds = contract.final_round
    authors = contract.authors()
    tokens_by_round = {a: [0] * rounds for a in authors}
    for u in contract.updates:
        tokens_by_round[u.author][u.round - 1] += u.tokens or 0
    return ContractReport(
        contract_id=contract.contract_id,
        evaluator=contract.evaluator,
        rounds=rounds,
        authors=authors,
        gains=gains,
        tokens_by_round=tokens_by_round,
        # entry r-1 measures the aggregate produced by round r
        global_evals=global_evals[1:],
        final_eval=global_evals[-1],
        shares=contract.shares(),
    )


def evaluate_and_assign(contract: CrowdsourceContract, caller: str, holdout: Dataset, store: ContentStore,
                        scale: float, max_workers: int = 1) -> ContractReport:
    """
    Scores every update on `holdout` and writes its tokens to the contract.
    Tokens are write-once, so a second call fails with TokensAlreadySetError.
    """
    if contract.evaluator is None or caller != contract.evaluator:
        raise NotEvaluatorError(f"{contract.contract_id}: {caller} is not the evaluator")
    already = [u.id for u in contract.updates if u.tokens is not None]
    if already:
        raise TokensAlreadySetError(f"{contract.contract_id}: updates {already} already hold tokens")

    gains, global_evals = _score(contract, holdout, store, max_workers)
    for g in sorted(gains, key=lambda g: g.update_id):
        contract.set_tokens(caller, g.update_id, tokens_from_gain(g.gain, scale))
    logger.info(
        "%s: assigned %d tokens over %d updates (%d rounds)",
        contract.contract_id, contract.total_tokens(), len(gains), contract.final_round,
    )
    return _assemble(contract, gains, global_evals)


def build_contract_report(contract: CrowdsourceContract, holdout: Dataset, store: ContentStore,
                          max_workers: int = 1) -> ContractReport:
    """Report from the tokens already on the contract; assigns nothing."""
    gains, global_evals = _score(contract, holdout, store, max_workers)
    return _assemble(contract, gains, global_evals)


# ==========================================
# 3. CONSORTIUM
# ==========================================

def _mean_eval(evals: list[EvalResult]) -> EvalResult:
    return EvalResult(
        loss=float(np.mean([e.loss for e in evals])),
        accuracy=float(np.mean([e.accuracy for e in evals])),
    )


def consortium_scores(consortium: ConsortiumContract, aux_reports: list[ContractReport]) -> ContributivityReport:
    """
    Main-contract report of a consortium. A member's main tokens are the sum of
    its tokens over the auxiliary contracts it trained; the main model's
    performance per round is the mean of the auxiliary global-model evaluations.
    """
    by_id = {r.contract_id: r for r in aux_reports}
    ordered = []
    for aux in consortium.aux_contracts:
        if not aux.training_finished:
            raise UnfinishedContractError(f"{aux.contract_id}: training is still open")
        if not aux.all_tokens_set():
            raise UnfinishedContractError(f"{aux.contract_id}: tokens have not been assigned")
        if aux.contract_id not in by_id:
            raise UnfinishedContractError(f"{aux.contract_id}: no evaluation report supplied")
        ordered.append(by_id[aux.contract_id])

    rounds = max(r.rounds for r in ordered)
    members = sorted(consortium.members)
    tokens_by_round = {m: [0] * rounds for m in members}
    for report in ordered:
        for author, per_round in report.tokens_by_round.items():
            for i, tokens in enumerate(per_round):
                tokens_by_round[author][i] += tokens

    global_evals = []
    for i in range(rounds):
        global_evals.append(_mean_eval([
            r.global_evals[i] if i < len(r.global_evals) else r.final_eval for r in ordered
        ]))
    final_eval = _mean_eval([r.final_eval for r in ordered])

    totals = {m: sum(tokens_by_round[m]) for m in members}
    grand_total = sum(totals.values())
    shares = {m: t / grand_total for m, t in totals.items()} if grand_total else {}

    main = ContractReport(
        contract_id=consortium.main_contract.contract_id,
        evaluator=None,
        rounds=rounds,
        authors=members,
        gains=[g for r in ordered for g in r.gains],
        tokens_by_round=tokens_by_round,
        global_evals=global_evals,
        final_eval=final_eval,
        shares=shares,
    )
    logger.info("%s: main-model tokens %s", consortium.consortium_id, totals)
    return ContributivityReport(
        protocol="consortium",
        primary_contract_id=main.contract_id,
        contracts=[*ordered, main],
    )
