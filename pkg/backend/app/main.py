# app/main.py
"""
Command-line entry point.

  python -m app.main run --protocol crowdsource --clients 6 --rounds 5 --subsample 0.2
  python -m app.main run --config ../data/experiments/test_c_crowdsource.json
  python -m app.main replay ../data/runs/<run>
"""
import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from app.config import settings
from app.exceptions import SimulatorError
from app.models.experiment import ClientPlan, ExperimentPlan
from app.services.experiment import load_plan, run_plan
from app.services.replay import replay_run
from app.services.reporting import format_share_table
from app.utils.logging_config import configure_logging

logger = logging.getLogger(__name__)


# ==========================================
# 1. FLAG PARSING
# ==========================================

def _ratios(text: str) -> list[int]:
    try:
        ratios = [int(part) for part in text.split(":")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratios look like 2:1:1, got {text!r}") from None
    if len(ratios) < 2 or any(r <= 0 for r in ratios):
        raise argparse.ArgumentTypeError(f"need at least two positive ratios, got {text!r}")
    return ratios


def _floats(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.main", description=f"{settings.APP_NAME} {settings.APP_VERSION}")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="DEBUG, INFO, WARNING, ...")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write a run directory")
    run.add_argument("--config", help="JSON experiment plan; flags below override its values")
    run.add_argument("--name", help="experiment name (default: plan name or 'cli')")
    run.add_argument("--protocol", choices=["crowdsource", "consortium"])
    run.add_argument("--data-dir", help=f"MNIST IDX directory (default {settings.MNIST_DATA_DIR})")
    clients = run.add_mutually_exclusive_group()
    clients.add_argument("--clients", type=int, help="N clients with equal random splits")
    clients.add_argument("--ratios", type=_ratios, help="split ratios, e.g. 2:1:1")
    run.add_argument("--flip", type=_floats, help="label-flip proportion per client, e.g. 0,0.3,0.9")
    run.add_argument("--rounds", type=int)
    run.add_argument("--epochs", type=int, help="local epochs per round")
    run.add_argument("--batch-size", type=int)
    run.add_argument("--lr", type=float, help="learning rate")
    run.add_argument("--hidden", type=_ints, help="hidden layer widths, e.g. 128 or 256,128")
    run.add_argument("--seed", type=int)
    run.add_argument("--subsample", type=float, help="fraction of the train set to use")
    run.add_argument("--token-scale", type=float, help="tokens per unit of loss reduction")
    run.add_argument("--round-duration", type=int, help="logical seconds per round")
    run.add_argument("--workers", type=int, help="client threads per round")
    run.add_argument("--out", help=f"run directory (default under {settings.OUTPUT_DIR})")

    replay = sub.add_parser("replay", help="verify a run directory against its transaction log")
    replay.add_argument("path", help="run directory or its transactions.jsonl")
    return parser


def plan_from_args(args: argparse.Namespace) -> ExperimentPlan:
    """Plan file values, overridden by whatever flags were given."""
    base = load_plan(args.config).model_dump() if args.config else {"name": "cli"}

    if args.clients is not None:
        base["clients"] = [{"name": f"client-{i + 1}"} for i in range(args.clients)]
    elif args.ratios is not None:
        base["clients"] = [{"name": f"client-{i + 1}", "ratio": r} for i, r in enumerate(args.ratios)]
    if "clients" not in base:
        raise ValueError("give --clients N, --ratios a:b:c or a --config plan with clients")
    if args.flip is not None:
        if len(args.flip) != len(base["clients"]):
            raise ValueError(f"--flip has {len(args.flip)} values for {len(base['clients'])} clients")
        base["clients"] = [{**ClientPlan.model_validate(c).model_dump(), "flip": p}
                           for c, p in zip(base["clients"], args.flip)]

    overrides = {
        "name": args.name,
        "protocol": args.protocol,
        "data_dir": args.data_dir,
        "rounds": args.rounds,
        "epochs_per_round": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "hidden_layers": args.hidden,
        "seed": args.seed,
        "subsample": args.subsample,
        "token_scale": args.token_scale,
        "round_duration": args.round_duration,
        "max_workers": args.workers,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentPlan.model_validate(base)


# ==========================================
# 2. COMMANDS
# ==========================================

def cmd_run(args: argparse.Namespace) -> int:
    plan = plan_from_args(args)
    out = Path(args.out) if args.out else Path(settings.OUTPUT_DIR) / f"{plan.name}-{plan.protocol}-seed{plan.seed}"
    manifest, report = run_plan(plan, out)
    names = {address: name for name, address in manifest.client_addresses.items()}
    print(format_share_table(report, names))
    if manifest.test_eval is not None:
        print(f"test set: loss {manifest.test_eval.loss:.4f}, accuracy {manifest.test_eval.accuracy:.4f}")
    print(f"run directory: {out}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    report = replay_run(args.path)
    print(f"replay ok: {len(report.contracts)} contract report(s) reproduced exactly")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_replay(args)
    except (SimulatorError, ValidationError, ValueError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
