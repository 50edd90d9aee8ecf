# app/services/reporting.py
"""
Run directory writers.

  report.csv          contract_id, round, author, tokens_cumulative, share, global_loss, global_accuracy
  transactions.jsonl  one ledger transaction per line
  manifest.json       RunManifest
  cas/                model blobs named by cid (written by the ContentStore)
  holdouts/           IDX copy of every evaluator's holdout set
"""
import csv
import io
import logging
from pathlib import Path

from app.config import settings
from app.models.dataset import Dataset
from app.models.experiment import ExperimentConfig, ExperimentPlan, HoldoutFiles, RunManifest
from app.models.nn import EvalResult
from app.models.report import ContributivityReport, ReportRow
from app.services.cas import ContentStore
from app.services.contributivity import final_model
from app.services.dataio import write_idx
from app.services.ledger import Ledger
from app.services.protocol import CONSORTIUM_ID, CROWDSOURCE_ID, client_training_data

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["contract_id", "round", "author", "tokens_cumulative", "share", "global_loss", "global_accuracy"]


# ==========================================
# 1. CSV
# ==========================================

def report_rows(report: ContributivityReport) -> list[ReportRow]:
    """One row per (contract, round, author); share is cumulative up to that round."""
    rows = []
    for contract in report.contracts:
        cumulative = {a: contract.cumulative_tokens(a) for a in contract.authors}
        for r in range(1, contract.rounds + 1):
            total = sum(c[r - 1] for c in cumulative.values())
            measured = contract.global_evals[r - 1]
            for author in contract.authors:
                tokens = cumulative[author][r - 1]
                rows.append(ReportRow(
                    contract_id=contract.contract_id,
                    round=r,
                    author=author,
                    tokens_cumulative=tokens,
                    share=tokens / total if total else None,
                    global_loss=measured.loss,
                    global_accuracy=measured.accuracy,
                ))
    return rows


def render_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({
            "contract_id": row.contract_id,
            "round": row.round,
            "author": row.author,
            "tokens_cumulative": row.tokens_cumulative,
            "share": "" if row.share is None else repr(row.share),
            "global_loss": repr(row.global_loss),
            "global_accuracy": repr(row.global_accuracy),
        })
    return buf.getvalue()


def write_report_csv(report: ContributivityReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(report_rows(report)))
    return path


# ==========================================
# 2. SUMMARY TABLE
# ==========================================

def format_share_table(report: ContributivityReport, names: dict[str, str] | None = None) -> str:
    """Plain-text final shares of the primary contract, largest first."""
    names = names or {}
    primary = report.primary
    lines = [
        f"{report.protocol} | {primary.contract_id} | {primary.rounds} rounds",
        f"{'client':<16} {'address':<12} {'tokens':>12} {'share':>8}",
    ]
    ranked = sorted(primary.authors, key=lambda a: (-primary.total_tokens(a), a))
    for author in ranked:
        share = primary.shares.get(author)
        lines.append(
            f"{names.get(author, '-'):<16} {author[:10] + '..':<12} {primary.total_tokens(author):>12} "
            f"{'n/a' if share is None else f'{share:.4f}':>8}"
        )
    if primary.final_eval is not None:
        lines.append(f"final global model: loss {primary.final_eval.loss:.4f}, accuracy {primary.final_eval.accuracy:.4f}")
    return "\n".join(lines)


# ==========================================
# 3. RUN DIRECTORY
# ==========================================

def evaluator_holdouts(cfg: ExperimentConfig) -> dict[str, Dataset]:
    """contract_id -> the holdout its evaluator scored it with."""
    if cfg.protocol == "crowdsource":
        return {CROWDSOURCE_ID: cfg.holdout}
    # aux k belongs to members[k], in client order
    return {f"{CONSORTIUM_ID}/aux-{k}": client_training_data(spec) for k, spec in enumerate(cfg.clients)}


def write_holdouts(holdouts: dict[str, Dataset], out_dir: Path) -> dict[str, HoldoutFiles]:
    files = {}
    for contract_id, data in holdouts.items():
        stem = contract_id.replace("/", "_")
        images = Path("holdouts") / f"{stem}-images-idx3-ubyte"
        labels = Path("holdouts") / f"{stem}-labels-idx1-ubyte"
        write_idx(data, out_dir / images, out_dir / labels)
        files[contract_id] = HoldoutFiles(images=images.as_posix(), labels=labels.as_posix())
    return files


def write_run(out_dir: str | Path, plan: ExperimentPlan, cfg: ExperimentConfig, report: ContributivityReport,
              ledger: Ledger, store: ContentStore, test_eval: EvalResult | None, elapsed: float) -> RunManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    holdouts = write_holdouts(evaluator_holdouts(cfg), out_dir)
    manifest = RunManifest(
        app_version=settings.APP_VERSION,
        plan=plan,
        protocol=cfg.protocol,
        seed=cfg.seed,
        token_scale=cfg.token_scale,
        primary_contract_id=report.primary_contract_id,
        consortium_id=CONSORTIUM_ID if cfg.protocol == "consortium" else None,
        holdouts=holdouts,
        client_addresses={c.name: c.address for c in cfg.clients},
        final_shares=report.final_shares,
        final_models={
            contract_id: final_model(c, store).digest() for contract_id, c in sorted(ledger.contracts.items())
        },
        test_eval=test_eval,
        wall_clock_seconds=elapsed,
    )
    write_report_csv(report, out_dir / manifest.report_csv)
    ledger.export_log(out_dir / manifest.transactions)
    (out_dir / "manifest.json").write_text(manifest.model_dump_json(indent=2))
    logger.info("Wrote %s, %s and manifest.json to %s", manifest.report_csv, manifest.transactions, out_dir)
    return manifest
