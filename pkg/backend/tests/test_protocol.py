import numpy as np
import pytest
from pydantic import ValidationError

from app.models.dataset import Dataset, EqualRandom
from app.models.experiment import ClientSpec, ExperimentConfig
from app.models.nn import Architecture, TrainingConfig
from app.services.cas import ContentStore
from app.services.contributivity import global_model_at
from app.services.dataio import split
from app.services.ledger import Ledger
from app.services.nnmodel import evaluate, init_model, serialize
from app.services.protocol import (
    TrainerClient,
    client_training_data,
    make_attacker,
    run_consortium,
    run_crowdsource,
    run_rounds,
)
from app.utils.seeds import make_address

TRAINING = TrainingConfig(rounds=2, epochs_per_round=1, batch_size=16, learning_rate=0.1, seed=3)


def make_clients(data: Dataset, n: int, flips=None) -> list[ClientSpec]:
    parts = split(data, EqualRandom(n_clients=n), seed=11)
    flips = flips or [0.0] * n
    clients = []
    for i, (part, p) in enumerate(zip(parts, flips)):
        name = f"client-{i + 1}"
        if p > 0:
            clients.append(make_attacker(make_address(name), part, p, seed=100 + i, name=name))
        else:
            clients.append(ClientSpec(name=name, address=make_address(name), dataset=part))
    return clients


def make_config(protocol, clients, holdout=None, **overrides) -> ExperimentConfig:
    values = dict(
        protocol=protocol, clients=clients, training=TRAINING, hidden_layers=(16,),
        holdout=holdout, seed=3, start_time=0,
    )
    values.update(overrides)
    return ExperimentConfig(**values)


# --- crowdsource ---

def test_crowdsource_run_is_deterministic(toy_train, toy_test):
    cfg = make_config("crowdsource", make_clients(toy_train, 3), toy_test)
    first_ledger, second_ledger = Ledger(), Ledger()
    first = run_crowdsource(cfg, first_ledger, ContentStore())
    second = run_crowdsource(cfg, second_ledger, ContentStore())
    assert first == second
    assert first_ledger.transactions == second_ledger.transactions


def test_crowdsource_schedule_and_shares(toy_train, toy_test):
    cfg = make_config("crowdsource", make_clients(toy_train, 3), toy_test)
    ledger, store = Ledger(), ContentStore()
    report = run_crowdsource(cfg, ledger, store)

    contract = ledger.contract(report.primary_contract_id)
    assert contract.training_finished and contract.final_round == 2
    assert len(contract.updates) == 6
    for u in contract.updates:
        start = contract.round_start(u.round)
        assert start <= u.submitted_at < start + cfg.round_duration
        assert u.tokens is not None
    shares = report.final_shares
    assert set(shares) == {c.address for c in cfg.clients}
    assert abs(sum(shares.values()) - 1.0) <= 1e-12
    genesis_loss = evaluate(global_model_at(contract, 1, store), toy_test).loss
    assert report.primary.final_eval.loss < genesis_loss


def test_parallel_clients_match_sequential(toy_train, toy_test):
    clients = make_clients(toy_train, 3)
    sequential = run_crowdsource(make_config("crowdsource", clients, toy_test), Ledger(), ContentStore())
    parallel = run_crowdsource(make_config("crowdsource", clients, toy_test, max_workers=3), Ledger(), ContentStore())
    assert parallel == sequential


def test_zero_learning_rate_earns_no_tokens(toy_train, toy_test):
    training = TRAINING.model_copy(update={"learning_rate": 0.0})
    cfg = make_config("crowdsource", make_clients(toy_train, 2), toy_test, training=training)
    report = run_crowdsource(cfg, Ledger(), ContentStore())
    assert all(g.gain == 0.0 for g in report.primary.gains)
    assert report.final_shares == {}


def test_label_flipper_earns_less_than_honest_client(toy_train, toy_test):
    cfg = make_config("crowdsource", make_clients(toy_train, 2, flips=[0.0, 1.0]), toy_test,
                      training=TRAINING.model_copy(update={"rounds": 3}))
    report = run_crowdsource(cfg, Ledger(), ContentStore())
    honest, flipper = (c.address for c in cfg.clients)
    assert report.primary.total_tokens(honest) > report.primary.total_tokens(flipper)


def test_client_without_data_skips_rounds(toy_train, toy_test):
    clients = make_clients(toy_train, 2)
    idle = ClientSpec(name="idle", address=make_address("idle"), dataset=Dataset(images=np.zeros((0, 64)), labels=[]))
    ledger = Ledger()
    report = run_crowdsource(make_config("crowdsource", [*clients, idle], toy_test), ledger, ContentStore())
    assert idle.address not in ledger.contract(report.primary_contract_id).authors()


def test_crowdsource_needs_a_holdout(toy_train):
    with pytest.raises(ValidationError):
        make_config("crowdsource", make_clients(toy_train, 2), holdout=None)


# --- clients ---

def test_attacker_with_zero_flip_trains_like_honest(toy_train):
    honest = ClientSpec(name="h", address=make_address("h"), dataset=toy_train)
    attacker = make_attacker(make_address("h"), toy_train, 0.0, seed=5, name="h")
    np.testing.assert_array_equal(client_training_data(attacker).labels, client_training_data(honest).labels)


def test_trainers_agree_on_every_aggregate(toy_train):
    ledger, store = Ledger(), ContentStore()
    genesis = init_model(Architecture.mlp(64, (8,)), 0)
    contract = ledger.deploy_crowdsource(make_address("evaluator"), store.put(serialize(genesis)), 60)
    trainers = [TrainerClient(spec, store, TRAINING, master_seed=3) for spec in make_clients(toy_train, 3)]
    run_rounds(ledger, [(t, [contract]) for t in trainers], rounds=3, round_duration=60, max_workers=2)

    for r in range(1, 4):
        expected = global_model_at(contract, r, store).digest()
        assert {t.aggregates[(contract.contract_id, r)] for t in trainers} == {expected}
    assert ledger.clock.now == 180


# --- consortium ---

def test_two_member_consortium(toy_train):
    cfg = make_config("consortium", make_clients(toy_train, 2))
    ledger = Ledger()
    report = run_consortium(cfg, ledger, ContentStore())
    consortium = ledger.consortium("consortium")
    assert len(consortium.all_contracts()) == 3
    for aux, member in zip(consortium.aux_contracts, consortium.members):
        assert aux.evaluator == member
        assert {u.author for u in aux.updates} == set(consortium.members) - {member}
    main = report.primary
    for m in consortium.members:
        assert main.total_tokens(m) == sum(aux.token_balance(m) for aux in consortium.aux_contracts)
    assert all(u.tokens is None for u in consortium.main_contract.updates)


def test_consortium_member_trains_n_models_per_round(toy_train):
    cfg = make_config("consortium", make_clients(toy_train, 3), training=TRAINING.model_copy(update={"rounds": 1}))
    ledger = Ledger()
    run_consortium(cfg, ledger, ContentStore())
    consortium = ledger.consortium("consortium")
    for member in consortium.members:
        authored = [c for c in consortium.all_contracts() if member in {u.author for u in c.updates}]
        assert len(authored) == 3
        assert consortium.aux_for(member) not in authored
