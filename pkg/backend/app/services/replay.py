# app/services/replay.py
"""
Re-derives a run from its directory alone: ledger state from transactions.jsonl,
models from cas/, holdouts from holdouts/. Every recorded token value and the
whole report.csv must come out identical.
"""
import logging
from pathlib import Path

from pydantic import ValidationError

from app.config import settings
from app.exceptions import ReplayDivergenceError, SimulatorError
from app.models.experiment import RunManifest
from app.models.ledger import DeployConsortiumTx, DeployCrowdsourceTx, FinishTrainingTx, SetTokensTx, SubmitUpdateTx
from app.models.report import ContributivityReport
from app.services.cas import ContentStore
from app.services.contributivity import (
    build_contract_report,
    consortium_scores,
    final_model,
    load_model,
    tokens_from_gain,
)
from app.services.dataio import load_idx
from app.services.ledger import Ledger
from app.services.reporting import render_csv, report_rows

logger = logging.getLogger(__name__)


def _first(divergences: list[tuple[int, str]]) -> None:
    if divergences:
        seq, message = min(divergences)
        raise ReplayDivergenceError(f"record {seq}: {message}", seq=seq)


def load_manifest(run_dir: Path) -> RunManifest:
    try:
        return RunManifest.model_validate_json((run_dir / "manifest.json").read_text())
    except ValidationError as e:
        raise ReplayDivergenceError(f"manifest.json is invalid: {e}") from e


def _check_blobs(txs, store: ContentStore) -> None:
    divergences = []
    for tx in txs:
        if isinstance(tx, (DeployCrowdsourceTx, DeployConsortiumTx)):
            cids = [("genesis", tx.genesis)]
        elif isinstance(tx, SubmitUpdateTx):
            cids = [(f"update {tx.update_id} of {tx.contract_id}", tx.cid)]
        else:
            continue
        for what, cid in cids:
            if not store.has(cid):
                divergences.append((tx.seq, f"{what} points at {cid}, which is not in the store"))
                continue
            try:
                load_model(store, cid)
            except SimulatorError as e:
                divergences.append((tx.seq, f"{what} ({cid}) does not decode: {e}"))
    _first(divergences)


def _check_final_models(manifest: RunManifest, ledger: Ledger, txs, store: ContentStore) -> None:
    """Each contract's last aggregate must hash to the cid the manifest recorded."""
    closed_at = {tx.contract_id: tx.seq for tx in txs if isinstance(tx, FinishTrainingTx)}
    last_seq = txs[-1].seq if txs else 0
    divergences = []
    if set(manifest.final_models) != set(ledger.contracts):
        divergences.append((last_seq, f"manifest records final models for {sorted(manifest.final_models)}, "
                                      f"the log deploys {sorted(ledger.contracts)}"))
    for contract_id, recorded in manifest.final_models.items():
        if contract_id not in ledger.contracts:
            continue
        rebuilt = final_model(ledger.contract(contract_id), store).digest()
        if rebuilt != recorded:
            divergences.append((
                closed_at.get(contract_id, last_seq),
                f"final aggregate of {contract_id} is {rebuilt}, manifest records {recorded}",
            ))
    _first(divergences)


def replay_run(run_dir: str | Path) -> ContributivityReport:
    """
    Returns the rebuilt report when the run reproduces exactly; otherwise raises
    ReplayDivergenceError naming the first divergent transaction (or CSV line).
    """
    run_dir = Path(run_dir)
    if run_dir.is_file():
        run_dir = run_dir.parent
    manifest = load_manifest(run_dir)
    try:
        txs = Ledger.load_log(run_dir / manifest.transactions)
    except ValidationError as e:
        raise ReplayDivergenceError(f"{manifest.transactions} holds a malformed record: {e}") from e

    ledger = Ledger.replay(txs)
    store = ContentStore(run_dir / manifest.cas_dir)
    _check_blobs(txs, store)

    max_workers = manifest.plan.max_workers or settings.MAX_WORKERS
    reports = {}
    for contract_id, files in manifest.holdouts.items():
        holdout = load_idx(run_dir / files.images, run_dir / files.labels)
        reports[contract_id] = build_contract_report(ledger.contract(contract_id), holdout, store, max_workers)

    # every scored update must carry exactly the tokens its gain converts to
    recorded = {(tx.contract_id, tx.update_id): tx for tx in txs if isinstance(tx, SetTokensTx)}
    submitted = {(tx.contract_id, tx.update_id): tx for tx in txs if isinstance(tx, SubmitUpdateTx)}
    divergences = []
    for contract_id, report in reports.items():
        for gain in report.gains:
            expected = tokens_from_gain(gain.gain, manifest.token_scale)
            tx = recorded.get((contract_id, gain.update_id))
            if tx is None:
                submit = submitted[(contract_id, gain.update_id)]
                divergences.append((submit.seq, f"update {gain.update_id} of {contract_id} was never scored"))
            elif tx.tokens != expected:
                divergences.append((
                    tx.seq,
                    f"update {gain.update_id} of {contract_id} holds {tx.tokens} tokens, gain {gain.gain!r} gives {expected}",
                ))
    _first(divergences)
    _check_final_models(manifest, ledger, txs, store)

    if manifest.protocol == "crowdsource":
        rebuilt = ContributivityReport(
            protocol="crowdsource",
            primary_contract_id=manifest.primary_contract_id,
            contracts=[reports[manifest.primary_contract_id]],
        )
    else:
        consortium = ledger.consortium(manifest.consortium_id)
        rebuilt = consortium_scores(consortium, [reports[c.contract_id] for c in consortium.aux_contracts])

    expected_lines = render_csv(report_rows(rebuilt)).splitlines()
    actual_lines = (run_dir / manifest.report_csv).read_text().splitlines()
    for lineno, (want, got) in enumerate(zip(expected_lines, actual_lines), start=1):
        if want != got:
            raise ReplayDivergenceError(f"{manifest.report_csv} line {lineno}: recorded {got!r}, replay gives {want!r}")
    if len(expected_lines) != len(actual_lines):
        raise ReplayDivergenceError(
            f"{manifest.report_csv} has {len(actual_lines)} lines, replay gives {len(expected_lines)}"
        )

    logger.info("Replayed %d transactions from %s: report reproduced exactly", len(txs), run_dir)
    return rebuilt
