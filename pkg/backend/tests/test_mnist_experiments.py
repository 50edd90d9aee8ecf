"""
MNIST Tests A/B/C on a 12,000-image subsample (5 rounds, 1 epoch, batch 32,
lr 0.01). Skipped unless the IDX files sit under MNIST_DATA_DIR. Every run
goes through a run directory and must replay to the same report.
"""
import numpy as np
import pytest

from app.models.experiment import ClientPlan, ExperimentPlan
from app.services.dataio import load_mnist
from app.services.experiment import run_plan
from app.services.replay import replay_run

from conftest import mnist_available

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(not mnist_available(), reason="MNIST IDX files not found under MNIST_DATA_DIR"),
]

SUBSAMPLE = 0.2


@pytest.fixture(scope="module")
def mnist():
    return load_mnist()


def run(mnist, tmp_path, out_dir, protocol, ratios=None, flips=None, n=None, seed=0):
    n = n or len(ratios or flips)
    ratios = ratios or [1] * n
    flips = flips or [0.0] * n
    plan = ExperimentPlan(
        name=f"mnist-{protocol}",
        protocol=protocol,
        clients=[ClientPlan(name=f"client-{i + 1}", ratio=r, flip=p) for i, (r, p) in enumerate(zip(ratios, flips))],
        subsample=SUBSAMPLE,
        seed=seed,
    )
    train, test = mnist
    out_dir = out_dir / protocol
    manifest, report = run_plan(plan, out_dir, train, test)
    assert replay_run(out_dir).final_shares == report.final_shares
    shares = [report.final_shares.get(manifest.client_addresses[c.name], 0.0) for c in plan.clients]
    return report, shares, manifest.test_eval


def spearman(x, y) -> float:
    rx = np.argsort(np.argsort(x))
    ry = np.argsort(np.argsort(y))
    n = len(x)
    return 1 - 6 * float(np.sum((rx - ry) ** 2)) / (n * (n * n - 1))


# --- Test A: equal splits ---

@pytest.mark.parametrize("n", [3, 6])
def test_a_crowdsource_equal_shares(mnist, tmp_path, n):
    _, shares, test_eval = run(mnist, tmp_path, "crowdsource", n=n)
    assert all(abs(s - 1 / n) <= 0.05 for s in shares)
    assert test_eval.accuracy >= 0.85


@pytest.mark.parametrize("n", [3, 6])
def test_a_consortium_matches_crowdsource(mnist, tmp_path, n):
    _, crowd, _ = run(mnist, tmp_path, "crowdsource", n=n)
    _, consortium, test_eval = run(mnist, tmp_path, "consortium", n=n)
    assert all(abs(s - 1 / n) <= 0.05 for s in consortium)
    assert max(abs(a - b) for a, b in zip(crowd, consortium)) <= 0.05
    assert test_eval.accuracy >= 0.85


# --- Test B: unequal splits ---

def test_b_larger_dataset_earns_more(mnist, tmp_path):
    _, shares, _ = run(mnist, tmp_path, "crowdsource", ratios=[2, 1, 1])
    assert shares[0] > shares[1] and shares[0] > shares[2]
    assert abs(shares[1] - shares[2]) <= 0.05


@pytest.mark.parametrize("protocol,minimum", [("crowdsource", 1.0), ("consortium", 0.9)])
def test_b_token_order_follows_dataset_size(mnist, tmp_path, protocol, minimum):
    ratios = [6, 5, 4, 3, 2, 1]
    _, shares, _ = run(mnist, tmp_path, protocol, ratios=ratios)
    assert spearman(ratios, shares) >= minimum


# --- Test C: label flipping ---

def test_c_crowdsource_penalises_flipping(mnist, tmp_path):
    _, shares, _ = run(mnist, tmp_path, "crowdsource", flips=[0.0, 0.3, 0.6, 0.9])
    assert shares[0] > shares[1] > shares[2] > shares[3]


def test_c_consortium_heavy_flipper_gets_almost_nothing(mnist, tmp_path):
    report, shares, _ = run(mnist, tmp_path, "consortium", flips=[0.0, 0.9])
    assert shares[1] < 0.05
    assert report.primary.gains
