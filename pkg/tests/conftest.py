from pathlib import Path

import numpy as np
import pytest

from gtd_lab.graph import Dataset, SplitMask, graph_from_edges, load_dataset, split_nodes

CORA = Path(__file__).resolve().parents[1] / "data" / "cora"

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def random_dataset(n=12, d=5, c=3, p=0.3, seed=0, train_fraction=0.5) -> Dataset:
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    graph = graph_from_edges(n, iu[keep], ju[keep])
    feats = rng.normal(size=(n, d)).astype(np.float32)
    labels = rng.integers(0, c, size=n)
    labels[:c] = np.arange(c)
    return Dataset(graph, feats, labels, c, split_nodes(n, train_fraction, seed), name=f"random{seed}")


def separable_dataset(n=40, seed=0) -> Dataset:
    """Two well-separated feature clusters joined by intra-class edges only."""
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], n // 2)
    feats = rng.normal(scale=0.1, size=(n, 2)).astype(np.float32)
    feats[:, 0] += np.where(labels == 0, -2.0, 2.0)
    src, dst = [], []
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        src += list(members[:-1])
        dst += list(members[1:])
    graph = graph_from_edges(n, src, dst)
    return Dataset(graph, feats, labels, 2, split_nodes(n, 0.5, seed), name="separable")


@pytest.fixture
def tiny():
    return random_dataset()


@pytest.fixture
def separable():
    return separable_dataset()


@pytest.fixture(scope="session")
def cora():
    if not (CORA / "meta.json").is_file():
        pytest.skip("Cora dataset directory not present")
    return load_dataset(CORA)


@pytest.fixture(scope="session")
def cora_experiment(cora, tmp_path_factory):
    """Memoized Cora GCN runs: 3 repetitions, 1:1 split, hard attack, base seed 0."""
    from gtd_lab.experiment import ExperimentConfig, run_experiment

    cache = {}
    out = tmp_path_factory.mktemp("cora-runs")

    def run(regime: str, **changes):
        key = (regime, tuple(sorted((k, repr(v)) for k, v in changes.items())))
        if key not in cache:
            cfg = {
                "dataset": str(CORA),
                "model": "GCN",
                "regime": regime,
                "attack_modes": ["hard"],
                "split_ratio": "1:1",
                "repetitions": 3,
                "base_seed": 0,
                "out": str(out),
                **changes,
            }
            cache[key] = run_experiment(ExperimentConfig.from_dict(cfg), persist=False)
        return cache[key]

    return run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
