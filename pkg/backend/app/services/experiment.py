# app/services/experiment.py
"""Turns a declarative ExperimentPlan into a runnable ExperimentConfig and runs it into a directory."""
import logging
import time
from pathlib import Path

from pydantic import ValidationError

from app.config import settings
from app.exceptions import ExperimentConfigError
from app.models.dataset import Dataset, EqualRandom, RatioRandom
from app.models.experiment import ClientSpec, ExperimentConfig, ExperimentPlan, RunManifest
from app.models.nn import TrainingConfig
from app.models.report import ContributivityReport
from app.services import reporting
from app.services.cas import ContentStore
from app.services.contributivity import final_model
from app.services.dataio import load_mnist, split, subsample
from app.services.ledger import Ledger
from app.services.nnmodel import evaluate
from app.services.protocol import make_attacker, run_protocol
from app.utils.seeds import derive_seed, make_address

logger = logging.getLogger(__name__)


def load_plan(path: str | Path) -> ExperimentPlan:
    try:
        return ExperimentPlan.model_validate_json(Path(path).read_text())
    except ValidationError as e:
        raise ExperimentConfigError(f"invalid plan {path}: {e}") from e


def build_experiment(plan: ExperimentPlan, train: Dataset | None = None,
                     test: Dataset | None = None) -> tuple[ExperimentConfig, Dataset]:
    """
    Loads (or takes) the train/test sets, subsamples and splits the train set
    between the plan's clients and returns the config plus the test set.
    Unset plan values fall back to settings.
    """
    if train is None or test is None:
        train, test = load_mnist(plan.data_dir)
    if plan.subsample is not None and plan.subsample < 1:
        train = subsample(train, plan.subsample, derive_seed(plan.seed, "subsample"))

    ratios = tuple(c.ratio for c in plan.clients)
    spec = EqualRandom(n_clients=len(ratios)) if len(set(ratios)) == 1 else RatioRandom(ratios=ratios)
    parts = split(train, spec, derive_seed(plan.seed, "split"))

    clients = []
    for client, part in zip(plan.clients, parts):
        address = make_address(client.name)
        if client.flip > 0:
            clients.append(make_attacker(address, part, client.flip, derive_seed(plan.seed, "flip", client.name),
                                         name=client.name))
        else:
            clients.append(ClientSpec(name=client.name, address=address, dataset=part))
        logger.info("client %s (%s): %d samples, flip p=%g", client.name, address[:8], len(part), client.flip)

    try:
        training = TrainingConfig(
            rounds=plan.rounds or settings.ROUNDS,
            epochs_per_round=plan.epochs_per_round or settings.EPOCHS_PER_ROUND,
            batch_size=plan.batch_size or settings.BATCH_SIZE,
            learning_rate=plan.learning_rate if plan.learning_rate is not None else settings.LEARNING_RATE,
            seed=plan.seed,
        )
        cfg = ExperimentConfig(
            protocol=plan.protocol,
            clients=clients,
            training=training,
            hidden_layers=plan.hidden_layers if plan.hidden_layers is not None else settings.hidden_layers,
            round_duration=plan.round_duration or settings.ROUND_DURATION,
            token_scale=plan.token_scale or settings.TOKEN_SCALE,
            holdout=test if plan.protocol == "crowdsource" else None,
            subsample=plan.subsample,
            seed=plan.seed,
            start_time=settings.START_TIME,
            max_workers=plan.max_workers or settings.MAX_WORKERS,
        )
    except ValidationError as e:
        raise ExperimentConfigError(f"plan {plan.name!r} does not yield a valid experiment: {e}") from e
    return cfg, test


def final_model_eval(report: ContributivityReport, ledger: Ledger, store: ContentStore, test: Dataset):
    """The primary contract's last aggregate, measured on the test set."""
    return evaluate(final_model(ledger.contract(report.primary_contract_id), store), test)


def run_plan(plan: ExperimentPlan, out_dir: str | Path, train: Dataset | None = None,
             test: Dataset | None = None) -> tuple[RunManifest, ContributivityReport]:
    """Runs `plan` and writes a self-contained run directory (see reporting.write_run)."""
    out_dir = Path(out_dir)
    if (out_dir / "manifest.json").exists():
        raise ExperimentConfigError(f"{out_dir} already holds a run; pick another --out")

    started = time.perf_counter()
    cfg, test = build_experiment(plan, train, test)
    ledger = Ledger(cfg.start_time)
    store = ContentStore(out_dir / "cas")
    report = run_protocol(cfg, ledger, store)
    test_eval = final_model_eval(report, ledger, store, test)
    elapsed = time.perf_counter() - started

    manifest = reporting.write_run(out_dir, plan, cfg, report, ledger, store, test_eval, elapsed)
    logger.info("Run %s finished in %.1fs: test accuracy %.4f", plan.name, elapsed, test_eval.accuracy)
    return manifest, report
