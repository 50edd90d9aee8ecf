import threading

import pytest

from app.exceptions import (
    ClockError,
    ConsortiumMembershipError,
    DuplicateSubmissionInRoundError,
    EvaluatorMayNotTrainError,
    NotATrainerError,
    NotEvaluatorError,
    PreGenesisQueryError,
    ReplayDivergenceError,
    TokensAlreadySetError,
    TrainingFinishedError,
    UndefinedShareError,
    UnknownUpdateError,
    ZeroDurationError,
)
from app.models.ledger import SubmitUpdateTx
from app.services.cas import cid_for
from app.services.ledger import Ledger, SimClock, deploy_consortium, deploy_crowdsource
from app.utils.seeds import make_address

ALICE = make_address("alice")
BOB = make_address("bob")
CAROL = make_address("carol")
DAVID = make_address("david")
GENESIS = cid_for(b"genesis")


def cid(label: str) -> str:
    return cid_for(label.encode())


@pytest.fixture
def contract(ledger):
    return ledger.deploy_crowdsource(ALICE, GENESIS, 60)


# --- standalone deployment ---

def test_standalone_contracts_share_a_caller_lock():
    lock = threading.RLock()
    crowd = deploy_crowdsource(ALICE, GENESIS, 60, now=0, lock=lock)
    consortium = deploy_consortium([ALICE, BOB], GENESIS, 60, now=0, lock=lock)
    with lock:
        assert crowd.submit_update(BOB, cid("b1"), now=30) == 0
        consortium.main_contract.submit_update(ALICE, cid("a1"), now=30)
    assert [u.author for u in crowd.updates_in_round(1)] == [BOB]
    assert len(consortium.main_contract.updates) == 1


# --- time ---

def test_round_boundaries(contract):
    assert contract.deployed_at == 100
    assert contract.round_at(100) == 1
    assert contract.round_at(159) == 1
    assert contract.round_at(160) == 2
    with pytest.raises(PreGenesisQueryError):
        contract.round_at(99)


def test_zero_duration_is_rejected(ledger):
    with pytest.raises(ZeroDurationError):
        ledger.deploy_crowdsource(ALICE, GENESIS, 0)


def test_clock_never_moves_back():
    clock = SimClock(10)
    clock.advance(5)
    with pytest.raises(ClockError):
        clock.advance_to(14)


# --- submissions ---

def test_submission_lands_in_current_round(ledger, contract):
    ledger.clock.advance_to(130)
    uid = contract.submit_update(BOB, cid("b1"))
    record = contract.update(uid)
    assert (record.round, record.author, record.submitted_at, record.tokens) == (1, BOB, 130, None)


def test_evaluator_may_not_train(contract):
    with pytest.raises(EvaluatorMayNotTrainError):
        contract.submit_update(ALICE, cid("a1"))


def test_one_submission_per_author_per_round(ledger, contract):
    contract.submit_update(BOB, cid("b1"))
    with pytest.raises(DuplicateSubmissionInRoundError):
        contract.submit_update(BOB, cid("b1-again"))
    ledger.clock.advance_to(160)
    contract.submit_update(BOB, cid("b2"))
    assert [u.round for u in contract.updates] == [1, 2]


def test_trainer_allowlist(ledger):
    closed = ledger.deploy_crowdsource(ALICE, GENESIS, 60, trainers=[BOB])
    with pytest.raises(NotATrainerError):
        closed.submit_update(CAROL, cid("c1"))


def test_no_submissions_after_finish(contract):
    contract.finish_training()
    with pytest.raises(TrainingFinishedError):
        contract.submit_update(BOB, cid("b1"))


def test_updates_in_round_use_address_order(ledger, contract):
    for author in (DAVID, BOB, CAROL):
        contract.submit_update(author, cid(author))
    assert [u.author for u in contract.updates_in_round(1)] == sorted([BOB, CAROL, DAVID])
    assert contract.updates_in_round(2) == []


def test_skipped_round_is_allowed(ledger, contract):
    contract.submit_update(BOB, cid("b1"))
    ledger.clock.advance_to(220)
    contract.submit_update(BOB, cid("b3"))
    assert contract.update(1).round == 3
    assert contract.updates_in_round(2) == []


# --- tokens and shares ---

def test_set_tokens_guards(contract):
    uid = contract.submit_update(BOB, cid("b1"))
    with pytest.raises(NotEvaluatorError):
        contract.set_tokens(BOB, uid, 10)
    with pytest.raises(UnknownUpdateError):
        contract.set_tokens(ALICE, 99, 10)
    contract.set_tokens(ALICE, uid, 500)
    assert contract.token_balance(BOB) == 500
    with pytest.raises(TokensAlreadySetError):
        contract.set_tokens(ALICE, uid, 1)


def test_shares(contract):
    b = contract.submit_update(BOB, cid("b1"))
    c = contract.submit_update(CAROL, cid("c1"))
    with pytest.raises(UndefinedShareError):
        contract.share(BOB)
    assert contract.shares() == {}
    contract.set_tokens(ALICE, b, 300)
    contract.set_tokens(ALICE, c, 100)
    assert contract.share(BOB) == 0.75
    assert contract.total_tokens() == 400
    assert sum(contract.shares().values()) == pytest.approx(1.0, abs=1e-12)


def test_share_conservation_with_many_authors(ledger):
    authors = [make_address(f"trainer-{i}") for i in range(7)]
    contract = ledger.deploy_crowdsource(ALICE, GENESIS, 60)
    for i, author in enumerate(authors):
        uid = contract.submit_update(author, cid(author))
        contract.set_tokens(ALICE, uid, 1000 * i + 333)
    assert abs(sum(contract.shares().values()) - 1.0) <= 1e-12


# --- consortium ---

def test_consortium_shape(ledger):
    members = [ALICE, BOB, CAROL]
    consortium = ledger.deploy_consortium(members, GENESIS, 60)
    assert len(consortium.all_contracts()) == 4
    assert consortium.main_contract.evaluator is None
    for k, member in enumerate(members):
        assert consortium.aux_contracts[k].evaluator == member
        trained = consortium.contracts_for_trainer(member)
        assert len(trained) == 3
        assert consortium.aux_for(member) not in trained
    for c in consortium.all_contracts():
        assert (c.genesis, c.round_duration, c.deployed_at) == (GENESIS, 60, 100)


def test_two_member_consortium_has_single_trainer_aux(ledger):
    consortium = ledger.deploy_consortium([ALICE, BOB], GENESIS, 60)
    assert len(consortium.all_contracts()) == 3
    assert consortium.aux_contracts[0].trainers == {BOB}
    assert consortium.aux_contracts[1].trainers == {ALICE}
    with pytest.raises(EvaluatorMayNotTrainError):
        consortium.aux_for(ALICE).submit_update(ALICE, cid("own"))


def test_consortium_membership_rules(ledger):
    with pytest.raises(ConsortiumMembershipError):
        ledger.deploy_consortium([ALICE, ALICE], GENESIS, 60)
    with pytest.raises(ConsortiumMembershipError):
        ledger.deploy_consortium([ALICE], GENESIS, 60)
    consortium = ledger.deploy_consortium([ALICE, BOB], GENESIS, 60)
    with pytest.raises(ConsortiumMembershipError):
        consortium.aux_for(CAROL)


# --- log and replay ---

def _busy_ledger() -> Ledger:
    ledger = Ledger(start_time=0)
    crowd = ledger.deploy_crowdsource(ALICE, GENESIS, 60, contract_id="crowdsource")
    consortium = ledger.deploy_consortium([BOB, CAROL], GENESIS, 60, consortium_id="consortium")
    ledger.clock.advance_to(30)
    crowd.submit_update(BOB, cid("b1"))
    crowd.submit_update(CAROL, cid("c1"))
    consortium.main_contract.submit_update(BOB, cid("mb1"))
    consortium.aux_contracts[0].submit_update(CAROL, cid("ac1"))
    ledger.clock.advance_to(120)
    crowd.finish_training()
    crowd.set_tokens(ALICE, 0, 7)
    crowd.set_tokens(ALICE, 1, 3)
    return ledger


def _state(ledger: Ledger):
    return {cid_: ([u.model_dump() for u in c.updates], c.training_finished) for cid_, c in ledger.contracts.items()}


def test_log_round_trip_and_replay(tmp_path):
    ledger = _busy_ledger()
    assert [tx.seq for tx in ledger.transactions] == list(range(len(ledger.transactions)))
    path = ledger.export_log(tmp_path / "transactions.jsonl")
    loaded = Ledger.load_log(path)
    assert loaded == ledger.transactions

    replayed = Ledger.replay(loaded)
    assert _state(replayed) == _state(ledger)
    assert replayed.transactions == ledger.transactions
    assert replayed.contract("crowdsource").share(BOB) == 0.7


def test_replay_rejects_out_of_order_records():
    txs = _busy_ledger().transactions
    swapped = [txs[1], txs[0], *txs[2:]]
    with pytest.raises(ReplayDivergenceError) as info:
        Ledger.replay(swapped)
    assert info.value.seq == 0


def test_replay_rejects_illegal_transition():
    txs = list(_busy_ledger().transactions)
    submit = next(tx for tx in txs if isinstance(tx, SubmitUpdateTx))
    dup = submit.model_copy(update={"seq": len(txs), "update_id": 99})
    txs.insert(len(txs), dup)
    with pytest.raises(ReplayDivergenceError) as info:
        Ledger.replay(txs)
    assert info.value.seq == len(txs) - 1
