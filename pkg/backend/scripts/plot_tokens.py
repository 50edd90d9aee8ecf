# backend/scripts/plot_tokens.py
"""
Cumulative tokens per round for every author of every contract in a run's
report.csv, one panel per contract:

    python scripts/plot_tokens.py ../data/runs/test-a-crowdsource-seed0 [tokens.png]
"""
import sys
import os
import csv
from collections import defaultdict

# Path Setup
script_dir = os.path.dirname(os.path.abspath(__file__))
backend_path = os.path.dirname(script_dir)
sys.path.append(backend_path)

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from app.models.experiment import RunManifest


def load_series(run_dir: str):
    """contract_id -> author -> [(round, tokens_cumulative)]"""
    with open(os.path.join(run_dir, "manifest.json")) as f:
        manifest = RunManifest.model_validate_json(f.read())
    series = defaultdict(lambda: defaultdict(list))
    with open(os.path.join(run_dir, manifest.report_csv), newline="") as f:
        for row in csv.DictReader(f):
            series[row["contract_id"]][row["author"]].append((int(row["round"]), int(row["tokens_cumulative"])))
    return manifest, series


def plot(run_dir: str, out_path: str) -> None:
    manifest, series = load_series(run_dir)
    names = {address: name for name, address in manifest.client_addresses.items()}
    fig, axes = plt.subplots(1, len(series), figsize=(5 * len(series), 4), squeeze=False)
    for ax, (contract_id, authors) in zip(axes[0], series.items()):
        for author, points in sorted(authors.items()):
            rounds, tokens = zip(*points)
            ax.plot(rounds, tokens, marker="o", label=names.get(author, author[:8]))
        ax.set_title(contract_id)
        ax.set_xlabel("round")
        ax.set_ylabel("tokens (cumulative)")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    print(f"Saved {out_path}")


if __name__ == "__main__":
    if len(sys.argv) < 2:
        print("usage: plot_tokens.py RUN_DIR [OUT.png]")
        sys.exit(2)
    run_dir = sys.argv[1]
    plot(run_dir, sys.argv[2] if len(sys.argv) > 2 else os.path.join(run_dir, "tokens.png"))
