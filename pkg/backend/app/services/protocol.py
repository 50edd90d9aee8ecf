# app/services/protocol.py
"""
Client roles and the round loops of the Crowdsource and Consortium protocols.

Per round: every trainer rebuilds the global model from the ledger, trains
locally and puts the result in the store; once all clients are done the
orchestrator submits the cids in canonical (contract id, address) order at
mid-round and moves the clock to the next round boundary.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

from app.exceptions import DimensionMismatchError, ExperimentConfigError
from app.models.dataset import Dataset
from app.models.experiment import ClientSpec, ExperimentConfig, LabelFlipper
from app.models.nn import Architecture, ModelParams, TrainingConfig
from app.models.report import ContractReport, ContributivityReport
from app.services.cas import ContentStore
from app.services.contributivity import consortium_scores, evaluate_and_assign, global_model_at
from app.services.dataio import flip_labels
from app.services.ledger import CrowdsourceContract, Ledger
from app.services.nnmodel import init_model, serialize, train_local
from app.utils.seeds import derive_seed, make_address

logger = logging.getLogger(__name__)

CROWDSOURCE_ID = "crowdsource"
CONSORTIUM_ID = "consortium"


# ==========================================
# 1. CLIENTS
# ==========================================

def client_training_data(spec: ClientSpec) -> Dataset:
    """The data a client actually trains on: label flippers corrupt theirs once, up front."""
    if isinstance(spec.behavior, LabelFlipper):
        return flip_labels(spec.dataset, spec.behavior.p, spec.behavior.seed)
    return spec.dataset


def make_attacker(address: str, dataset: Dataset, p: float, seed: int, name: str = "attacker") -> ClientSpec:
    """A client that trains on flip_labels(dataset, p, seed) and otherwise follows the protocol."""
    return ClientSpec(name=name, address=address, dataset=dataset, behavior=LabelFlipper(p=p, seed=seed))


class TrainerClient:
    """Holds private data; trains on whatever global model the ledger implies."""

    def __init__(self, spec: ClientSpec, store: ContentStore, training: TrainingConfig, master_seed: int):
        self.name = spec.name
        self.address = spec.address
        self.dataset = client_training_data(spec)
        self.store = store
        self.training = training
        self.master_seed = master_seed
        # (contract_id, round) -> digest of the aggregate this client trained from
        self.aggregates: dict[tuple[str, int], str] = {}

    def __repr__(self) -> str:
        return f"<TrainerClient {self.name} {self.address[:8]} n={len(self.dataset)}>"

    @property
    def has_data(self) -> bool:
        return len(self.dataset) > 0

    def round_seed(self, contract_id: str, round_: int) -> int:
        return derive_seed(self.master_seed, self.address, contract_id, round_)

    def train_round(self, contract: CrowdsourceContract, round_: int) -> str:
        """Trains from global_model_at(round_) and returns the cid of the result."""
        base = global_model_at(contract, round_, self.store)
        self.aggregates[(contract.contract_id, round_)] = base.digest()
        seed = self.round_seed(contract.contract_id, round_)
        logger.debug("%s trains on %s round %d (seed %d)", self.name, contract.contract_id, round_, seed)
        trained = train_local(base, self.dataset, self.training, seed)
        return self.store.put(serialize(trained))


class EvaluatorClient:
    """Holds the holdout set and assigns tokens on the contract it evaluates."""

    def __init__(self, name: str, address: str, holdout: Dataset, store: ContentStore,
                 token_scale: float, max_workers: int = 1):
        self.name = name
        self.address = address
        self.holdout = holdout
        self.store = store
        self.token_scale = token_scale
        self.max_workers = max_workers

    def assign(self, contract: CrowdsourceContract) -> ContractReport:
        logger.info("%s evaluates %s on %d holdout samples", self.name, contract.contract_id, len(self.holdout))
        return evaluate_and_assign(
            contract, self.address, self.holdout, self.store, self.token_scale, max_workers=self.max_workers,
        )


# ==========================================
# 2. ROUND LOOP
# ==========================================

def _genesis(cfg: ExperimentConfig, n_features: int, store: ContentStore) -> tuple[ModelParams, str]:
    arch = Architecture.mlp(n_features, cfg.hidden_layers)
    model = init_model(arch, derive_seed(cfg.seed, "genesis"))
    return model, store.put(serialize(model))


def _feature_count(datasets: list[Dataset]) -> int:
    widths = {d.n_features for d in datasets if len(d)}
    if not widths:
        raise ExperimentConfigError("no client holds any data")
    if len(widths) > 1:
        raise DimensionMismatchError(f"clients disagree on the feature count: {sorted(widths)}")
    return widths.pop()


def run_rounds(ledger: Ledger, assignments: list[tuple[TrainerClient, list[CrowdsourceContract]]],
               rounds: int, round_duration: int, max_workers: int) -> None:
    deployed_at = ledger.clock.now
    for trainer, _ in assignments:
        if not trainer.has_data:
            logger.warning("%s holds no data and skips every round", trainer.name)
    jobs = [(t, c) for t, contracts in assignments if t.has_data for c in contracts]

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for r in range(1, rounds + 1):
            start = deployed_at + (r - 1) * round_duration
            logger.info("Round %d/%d opens at t=%d (%d training jobs)", r, rounds, start, len(jobs))
            # pool.map returns only when every client finished: the round barrier
            cids = list(pool.map(lambda job: job[0].train_round(job[1], r), jobs))

            ledger.clock.advance_to(start + round_duration // 2)
            for (trainer, contract), cid in sorted(
                zip(jobs, cids), key=lambda item: (item[0][1].contract_id, item[0][0].address)
            ):
                contract.submit_update(trainer.address, cid)
            ledger.clock.advance_to(start + round_duration)


# ==========================================
# 3. PROTOCOLS
# ==========================================

def run_crowdsource(cfg: ExperimentConfig, ledger: Ledger | None = None,
                    store: ContentStore | None = None) -> ContributivityReport:
    """
    One evaluator with the holdout, N trainers, one contract. After the last
    round training is closed and the evaluator assigns tokens.
    """
    if cfg.protocol != "crowdsource":
        raise ExperimentConfigError(f"run_crowdsource got a {cfg.protocol} config")
    ledger = ledger if ledger is not None else Ledger(cfg.start_time)
    store = store if store is not None else ContentStore()

    evaluator_address = make_address(cfg.evaluator_name)
    if evaluator_address in {c.address for c in cfg.clients}:
        raise ExperimentConfigError(f"evaluator address {evaluator_address} collides with a trainer")
    trainers = [TrainerClient(spec, store, cfg.training, cfg.seed) for spec in cfg.clients]
    n_features = _feature_count([cfg.holdout, *(t.dataset for t in trainers)])
    _, genesis_cid = _genesis(cfg, n_features, store)

    contract = ledger.deploy_crowdsource(
        evaluator_address, genesis_cid, cfg.round_duration,
        contract_id=CROWDSOURCE_ID, trainers=[t.address for t in trainers],
    )
    run_rounds(ledger, [(t, [contract]) for t in trainers], cfg.training.rounds, cfg.round_duration,
                cfg.max_workers)
    contract.finish_training()

    evaluator = EvaluatorClient(cfg.evaluator_name, evaluator_address, cfg.holdout, store,
                                cfg.token_scale, cfg.max_workers)
    report = evaluator.assign(contract)
    return ContributivityReport(protocol="crowdsource", primary_contract_id=contract.contract_id, contracts=[report])


def run_consortium(cfg: ExperimentConfig, ledger: Ledger | None = None,
                   store: ContentStore | None = None) -> ContributivityReport:
    """
    N members, N auxiliary contracts plus the main one. Member k trains the main
    model and every auxiliary model except aux k, which it evaluates on its own
    training data.
    """
    if cfg.protocol != "consortium":
        raise ExperimentConfigError(f"run_consortium got a {cfg.protocol} config")
    ledger = ledger if ledger is not None else Ledger(cfg.start_time)
    store = store if store is not None else ContentStore()

    trainers = [TrainerClient(spec, store, cfg.training, cfg.seed) for spec in cfg.clients]
    empty = [t.name for t in trainers if not t.has_data]
    if empty:
        raise ExperimentConfigError(f"consortium members need data to evaluate with: {empty} hold none")
    n_features = _feature_count([t.dataset for t in trainers])
    _, genesis_cid = _genesis(cfg, n_features, store)

    consortium = ledger.deploy_consortium(
        [t.address for t in trainers], genesis_cid, cfg.round_duration, consortium_id=CONSORTIUM_ID,
    )
    assignments = [(t, consortium.contracts_for_trainer(t.address)) for t in trainers]
    run_rounds(ledger, assignments, cfg.training.rounds, cfg.round_duration, cfg.max_workers)
    for contract in consortium.all_contracts():
        contract.finish_training()

    aux_reports = [
        EvaluatorClient(t.name, t.address, t.dataset, store, cfg.token_scale, cfg.max_workers).assign(aux)
        for t, aux in zip(trainers, consortium.aux_contracts)
    ]
    return consortium_scores(consortium, aux_reports)


def run_protocol(cfg: ExperimentConfig, ledger: Ledger | None = None,
                 store: ContentStore | None = None) -> ContributivityReport:
    if cfg.protocol == "crowdsource":
        return run_crowdsource(cfg, ledger, store)
    return run_consortium(cfg, ledger, store)
