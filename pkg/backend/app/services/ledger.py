# app/services/ledger.py
"""
Simulated chain hosting Crowdsource contracts and Consortium contracts.

Blocks are collapsed to logical timestamps: every transaction carries the
SimClock time it was applied at, and round r of a contract spans
[deployed_at + (r-1)*D, deployed_at + r*D).
"""
from __future__ import annotations

import logging
import threading
from pathlib import Path
from typing import Callable, Iterable

from app.exceptions import (
    ClockError,
    ConsortiumMembershipError,
    DuplicateSubmissionInRoundError,
    EvaluatorMayNotTrainError,
    LedgerError,
    NotATrainerError,
    NotEvaluatorError,
    PreGenesisQueryError,
    ReplayDivergenceError,
    TokensAlreadySetError,
    TrainingFinishedError,
    UndefinedShareError,
    UnknownContractError,
    UnknownUpdateError,
    ZeroDurationError,
)
from app.models.ledger import (
    DeployConsortiumTx,
    DeployCrowdsourceTx,
    FinishTrainingTx,
    SetTokensTx,
    SubmitUpdateTx,
    Transaction,
    UpdateRecord,
    transaction_adapter,
)

logger = logging.getLogger(__name__)

Journal = Callable[[Transaction], None]


class SimClock:
    """Logical time in seconds. Never moves backwards."""

    def __init__(self, origin: int = 0):
        self.origin = origin
        self.now = origin

    def advance_to(self, t: int) -> int:
        if t < self.now:
            raise ClockError(f"clock cannot move back from {self.now} to {t}")
        self.now = t
        return self.now

    def advance(self, seconds: int) -> int:
        return self.advance_to(self.now + seconds)


# ==========================================
# 1. CROWDSOURCE CONTRACT
# ==========================================

class CrowdsourceContract:
    """
    Append-only record of model updates for one model. The only mutation of an
    UpdateRecord after submission is the one-time token assignment.
    """

    def __init__(
        self,
        contract_id: str,
        evaluator: str | None,
        genesis: str,
        round_duration: int,
        deployed_at: int,
        trainers: Iterable[str] | None = None,
        clock: SimClock | None = None,
        journal: Journal | None = None,
        lock: threading.RLock | None = None,
    ):
        if round_duration <= 0:
            raise ZeroDurationError(f"round duration must be positive, got {round_duration}")
        self.contract_id = contract_id
        self.evaluator = evaluator
        self.genesis = genesis
        self.round_duration = round_duration
        self.deployed_at = deployed_at
        self.trainers = frozenset(trainers) if trainers is not None else None
        self.updates: list[UpdateRecord] = []
        self.training_finished = False
        self.finished_at: int | None = None
        self._clock = clock
        self._journal = journal
        self._lock = lock or threading.RLock()
        self._by_author_round: set[tuple[str, int]] = set()

    def __repr__(self) -> str:
        return f"<CrowdsourceContract {self.contract_id} updates={len(self.updates)} finished={self.training_finished}>"

    def _now(self, now: int | None) -> int:
        if now is not None:
            return now
        if self._clock is None:
            raise LedgerError(f"contract {self.contract_id} has no clock; pass `now` explicitly")
        return self._clock.now

    def _emit(self, tx: Transaction) -> None:
        if self._journal is not None:
            self._journal(tx)

    # --- time ---

    def round_at(self, t: int) -> int:
        if t < self.deployed_at:
            raise PreGenesisQueryError(f"time {t} precedes deployment at {self.deployed_at}")
        return 1 + (t - self.deployed_at) // self.round_duration

    def round_start(self, round_: int) -> int:
        return self.deployed_at + (round_ - 1) * self.round_duration

    @property
    def final_round(self) -> int:
        """Last round that can hold updates: closed rounds once finished, else the latest submission."""
        latest = max((u.round for u in self.updates), default=0)
        if self.finished_at is None:
            return latest
        return max(latest, (self.finished_at - self.deployed_at) // self.round_duration)

    # --- training ---

    def submit_update(self, author: str, cid: str, now: int | None = None) -> int:
        with self._lock:
            now = self._now(now)
            if self.training_finished:
                raise TrainingFinishedError(f"{self.contract_id}: training finished at {self.finished_at}")
            if author == self.evaluator:
                raise EvaluatorMayNotTrainError(f"{self.contract_id}: evaluator {author} may not submit updates")
            if self.trainers is not None and author not in self.trainers:
                raise NotATrainerError(f"{self.contract_id}: {author} is not a trainer on this contract")
            round_ = self.round_at(now)
            if (author, round_) in self._by_author_round:
                raise DuplicateSubmissionInRoundError(
                    f"{self.contract_id}: {author} already submitted in round {round_}"
                )
            record = UpdateRecord(id=len(self.updates), round=round_, author=author, cid=cid, submitted_at=now)
            self.updates.append(record)
            self._by_author_round.add((author, round_))
            self._emit(SubmitUpdateTx(
                at=now, contract_id=self.contract_id, update_id=record.id,
                author=author, cid=cid, round=round_,
            ))
            return record.id

    def updates_in_round(self, round_: int) -> list[UpdateRecord]:
        """Round `round_` updates in canonical order (author address ascending)."""
        if round_ < 1:
            raise ValueError(f"rounds start at 1, got {round_}")
        with self._lock:
            found = [u.model_copy() for u in self.updates if u.round == round_]
        return sorted(found, key=lambda u: u.author)

    def update(self, update_id: int) -> UpdateRecord:
        with self._lock:
            if not 0 <= update_id < len(self.updates):
                raise UnknownUpdateError(f"{self.contract_id}: no update with id {update_id}")
            return self.updates[update_id].model_copy()

    def finish_training(self, now: int | None = None) -> None:
        with self._lock:
            now = self._now(now)
            if self.training_finished:
                raise TrainingFinishedError(f"{self.contract_id}: training already finished at {self.finished_at}")
            self.training_finished = True
            self.finished_at = now
            self._emit(FinishTrainingTx(at=now, contract_id=self.contract_id))

    # --- tokens ---

    def set_tokens(self, caller: str, update_id: int, tokens: int, now: int | None = None) -> None:
        with self._lock:
            now = self._now(now)
            if self.evaluator is None or caller != self.evaluator:
                raise NotEvaluatorError(f"{self.contract_id}: {caller} is not the evaluator")
            if not 0 <= update_id < len(self.updates):
                raise UnknownUpdateError(f"{self.contract_id}: no update with id {update_id}")
            if tokens < 0:
                raise ValueError(f"tokens must be non-negative, got {tokens}")
            record = self.updates[update_id]
            if record.tokens is not None:
                raise TokensAlreadySetError(
                    f"{self.contract_id}: update {update_id} already holds {record.tokens} tokens"
                )
            record.tokens = int(tokens)
            self._emit(SetTokensTx(
                at=now, contract_id=self.contract_id, caller=caller, update_id=update_id, tokens=int(tokens),
            ))

    def authors(self) -> list[str]:
        with self._lock:
            return sorted({u.author for u in self.updates})

    def token_balance(self, addr: str) -> int:
        with self._lock:
            return sum(u.tokens or 0 for u in self.updates if u.author == addr)

    def total_tokens(self) -> int:
        with self._lock:
            return sum(u.tokens or 0 for u in self.updates)

    def share(self, addr: str) -> float:
        total = self.total_tokens()
        if total == 0:
            raise UndefinedShareError(f"{self.contract_id}: no tokens assigned yet, shares are undefined")
        return self.token_balance(addr) / total

    def shares(self) -> dict[str, float]:
        """Share per author; empty while no tokens are assigned."""
        total = self.total_tokens()
        if total == 0:
            return {}
        return {a: self.token_balance(a) / total for a in self.authors()}

    def all_tokens_set(self) -> bool:
        with self._lock:
            return all(u.tokens is not None for u in self.updates)


def deploy_crowdsource(
    evaluator: str | None,
    genesis: str,
    round_duration: int,
    now: int,
    contract_id: str = "crowdsource",
    trainers: Iterable[str] | None = None,
    clock: SimClock | None = None,
    journal: Journal | None = None,
    lock: threading.RLock | None = None,
) -> CrowdsourceContract:
    """Round 1 spans [now, now + round_duration)."""
    contract = CrowdsourceContract(
        contract_id, evaluator, genesis, round_duration, now,
        trainers=trainers, clock=clock, journal=journal, lock=lock,
    )
    if journal is not None:
        journal(DeployCrowdsourceTx(
            at=now, contract_id=contract_id, evaluator=evaluator, genesis=genesis,
            round_duration=round_duration,
            trainers=tuple(sorted(contract.trainers)) if contract.trainers is not None else None,
        ))
    return contract


# ==========================================
# 2. CONSORTIUM CONTRACT
# ==========================================

class ConsortiumContract:
    """
    N members, N auxiliary contracts (aux k evaluated by members[k], trained by
    the others) and one main contract trained by everyone, with no evaluator.
    """

    def __init__(self, consortium_id: str, members: list[str], aux_contracts: list[CrowdsourceContract],
                 main_contract: CrowdsourceContract):
        self.consortium_id = consortium_id
        self.members = list(members)
        self.aux_contracts = aux_contracts
        self.main_contract = main_contract

    def __repr__(self) -> str:
        return f"<ConsortiumContract {self.consortium_id} members={len(self.members)}>"

    def aux_for(self, member: str) -> CrowdsourceContract:
        """The auxiliary contract `member` evaluates."""
        try:
            return self.aux_contracts[self.members.index(member)]
        except ValueError:
            raise ConsortiumMembershipError(f"{member} is not a member of {self.consortium_id}") from None

    def contracts_for_trainer(self, member: str) -> list[CrowdsourceContract]:
        """Main contract first, then every auxiliary contract the member trains on."""
        own = self.aux_for(member)
        return [self.main_contract] + [c for c in self.aux_contracts if c is not own]

    def all_contracts(self) -> list[CrowdsourceContract]:
        return [*self.aux_contracts, self.main_contract]


def deploy_consortium(
    members: list[str],
    genesis: str,
    round_duration: int,
    now: int,
    consortium_id: str = "consortium",
    clock: SimClock | None = None,
    journal: Journal | None = None,
    lock: threading.RLock | None = None,
) -> ConsortiumContract:
    if len(members) < 2:
        raise ConsortiumMembershipError(f"a consortium needs at least 2 members, got {len(members)}")
    if len(set(members)) != len(members):
        raise ConsortiumMembershipError("consortium members must be distinct")
    if round_duration <= 0:
        raise ZeroDurationError(f"round duration must be positive, got {round_duration}")

    # sub-contracts are rebuilt from this one transaction on replay, so they do not journal their deploys
    if journal is not None:
        journal(DeployConsortiumTx(
            at=now, consortium_id=consortium_id, members=tuple(members), genesis=genesis,
            round_duration=round_duration,
        ))
    aux = [
        deploy_crowdsource(
            member, genesis, round_duration, now,
            contract_id=f"{consortium_id}/aux-{k}",
            trainers=[m for m in members if m != member],
            clock=clock, journal=None, lock=lock,
        )
        for k, member in enumerate(members)
    ]
    main = deploy_crowdsource(
        None, genesis, round_duration, now,
        contract_id=f"{consortium_id}/main", trainers=members,
        clock=clock, journal=None, lock=lock,
    )
    for contract in (*aux, main):
        contract._journal = journal
    return ConsortiumContract(consortium_id, members, aux, main)


# ==========================================
# 3. LEDGER
# ==========================================

class Ledger:
    """
    Owns the clock, every deployed contract and the transaction log. All
    contracts share one lock, so the ledger is the serialization point for
    concurrent clients.
    """

    def __init__(self, start_time: int = 0):
        self.clock = SimClock(start_time)
        self.contracts: dict[str, CrowdsourceContract] = {}
        self.consortia: dict[str, ConsortiumContract] = {}
        self.transactions: list[Transaction] = []
        self._lock = threading.RLock()

    def _record(self, tx: Transaction) -> None:
        with self._lock:
            self.transactions.append(tx.model_copy(update={"seq": len(self.transactions)}))

    def deploy_crowdsource(self, evaluator: str | None, genesis: str, round_duration: int,
                           contract_id: str | None = None, trainers: Iterable[str] | None = None) -> CrowdsourceContract:
        with self._lock:
            contract_id = contract_id or f"crowdsource-{len(self.contracts)}"
            if contract_id in self.contracts:
                raise LedgerError(f"contract id {contract_id} already deployed")
            contract = deploy_crowdsource(
                evaluator, genesis, round_duration, self.clock.now, contract_id=contract_id,
                trainers=trainers, clock=self.clock, journal=self._record, lock=self._lock,
            )
            self.contracts[contract_id] = contract
        logger.info("Deployed %s at t=%d (round duration %ds)", contract_id, contract.deployed_at, round_duration)
        return contract

    def deploy_consortium(self, members: list[str], genesis: str, round_duration: int,
                          consortium_id: str | None = None) -> ConsortiumContract:
        with self._lock:
            consortium_id = consortium_id or f"consortium-{len(self.consortia)}"
            if consortium_id in self.consortia:
                raise LedgerError(f"consortium id {consortium_id} already deployed")
            consortium = deploy_consortium(
                members, genesis, round_duration, self.clock.now, consortium_id=consortium_id,
                clock=self.clock, journal=self._record, lock=self._lock,
            )
            self.consortia[consortium_id] = consortium
            for contract in consortium.all_contracts():
                self.contracts[contract.contract_id] = contract
        logger.info("Deployed %s with %d members (%d contracts)", consortium_id, len(members), len(members) + 1)
        return consortium

    def contract(self, contract_id: str) -> CrowdsourceContract:
        try:
            return self.contracts[contract_id]
        except KeyError:
            raise UnknownContractError(f"no contract {contract_id}") from None

    def consortium(self, consortium_id: str) -> ConsortiumContract:
        try:
            return self.consortia[consortium_id]
        except KeyError:
            raise UnknownContractError(f"no consortium {consortium_id}") from None

    # ==========================================
    # 4. LOG EXPORT / REPLAY
    # ==========================================

    def export_log(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock:
            lines = [tx.model_dump_json() for tx in self.transactions]
        path.write_text("".join(line + "\n" for line in lines))
        return path

    @staticmethod
    def load_log(path: str | Path) -> list[Transaction]:
        return [
            transaction_adapter.validate_json(line)
            for line in Path(path).read_text().splitlines()
            if line.strip()
        ]

    @classmethod
    def replay(cls, transactions: list[Transaction]) -> "Ledger":
        """Rebuilds ledger state by re-applying every transaction in order."""
        ledger = cls(start_time=transactions[0].at if transactions else 0)
        for position, tx in enumerate(transactions):
            if tx.seq != position:
                raise ReplayDivergenceError(f"record {position} carries sequence number {tx.seq}", seq=position)
            try:
                ledger.clock.advance_to(tx.at)
                ledger._apply(tx)
            except (LedgerError, ValueError) as e:
                raise ReplayDivergenceError(f"record {tx.seq} ({tx.kind}) rejected: {e}", seq=tx.seq) from e
        return ledger

    def _apply(self, tx: Transaction) -> None:
        if isinstance(tx, DeployCrowdsourceTx):
            self.deploy_crowdsource(tx.evaluator, tx.genesis, tx.round_duration,
                                    contract_id=tx.contract_id, trainers=tx.trainers)
        elif isinstance(tx, DeployConsortiumTx):
            self.deploy_consortium(list(tx.members), tx.genesis, tx.round_duration, consortium_id=tx.consortium_id)
        elif isinstance(tx, SubmitUpdateTx):
            contract = self.contract(tx.contract_id)
            update_id = contract.submit_update(tx.author, tx.cid)
            recorded = contract.updates[update_id]
            if update_id != tx.update_id or recorded.round != tx.round:
                raise ReplayDivergenceError(
                    f"record {tx.seq}: replay assigned update {update_id} in round {recorded.round}, "
                    f"log says update {tx.update_id} in round {tx.round}",
                    seq=tx.seq,
                )
        elif isinstance(tx, SetTokensTx):
            self.contract(tx.contract_id).set_tokens(tx.caller, tx.update_id, tx.tokens)
        elif isinstance(tx, FinishTrainingTx):
            self.contract(tx.contract_id).finish_training()
        else:
            raise ReplayDivergenceError(f"unknown transaction kind {type(tx).__name__}", seq=tx.seq)
