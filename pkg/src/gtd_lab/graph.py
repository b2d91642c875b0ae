"""Graph and dataset containers, the on-disk dataset format, and propagation helpers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DatasetError",
    "MissingFileError",
    "DimensionMismatchError",
    "LabelRangeError",
    "SplitRangeError",
    "OverlappingSplitError",
    "Graph",
    "SplitMask",
    "Dataset",
    "graph_from_edges",
    "load_dataset",
    "save_dataset",
    "normalize_adjacency",
    "sgc_propagate",
    "split_nodes",
]


class DatasetError(ValueError):
    """Base class for anything wrong with a dataset directory."""


class MissingFileError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class SplitRangeError(DatasetError):
    pass


class OverlappingSplitError(DatasetError):
    pass


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph stored as a symmetric 0/1 CSR matrix (both directions kept)."""

    adjacency: sp.csr_matrix

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)


def graph_from_edges(num_nodes: int, src, dst) -> Graph:
    """Symmetrize, deduplicate and drop self-loops from an edge list."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    data = np.ones(rows.shape[0], dtype=np.float32)
    adj = sp.coo_matrix((data, (rows, cols)), shape=(num_nodes, num_nodes)).tocsr()
    # duplicates were summed by the coo->csr conversion
    adj.data[:] = 1.0
    adj.sort_indices()
    adj.eliminate_zeros()
    return Graph(adj)


@dataclass(frozen=True)
class SplitMask:
    train_ids: np.ndarray
    test_ids: np.ndarray

    def __post_init__(self):
        train = np.sort(np.asarray(self.train_ids, dtype=np.int64))
        test = np.sort(np.asarray(self.test_ids, dtype=np.int64))
        object.__setattr__(self, "train_ids", train)
        object.__setattr__(self, "test_ids", test)
        if np.intersect1d(train, test).size:
            raise OverlappingSplitError("overlapping split: a node is both train and test")

    @property
    def num_nodes(self) -> int:
        return self.train_ids.size + self.test_ids.size

    def membership(self) -> np.ndarray:
        """Boolean vector, True for train (member) nodes."""
        bits = np.zeros(self.num_nodes, dtype=bool)
        bits[self.train_ids] = True
        return bits

    def __eq__(self, other):
        if not isinstance(other, SplitMask):
            return NotImplemented
        return np.array_equal(self.train_ids, other.train_ids) and np.array_equal(
            self.test_ids, other.test_ids
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: SplitMask
    name: str = "dataset"
    _adj_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = self.graph.num_nodes
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DimensionMismatchError(
                f"features have {self.features.shape[0]} rows, graph has {n} nodes"
            )
        if self.labels.shape != (n,):
            raise DimensionMismatchError(f"expected {n} labels, got {self.labels.shape[0]}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")
        if self.split.num_nodes != n:
            raise SplitRangeError("split does not cover every node exactly once")

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def norm_adj(self) -> sp.csr_matrix:
        """Normalized adjacency, computed once per dataset instance."""
        if "norm" not in self._adj_cache:
            self._adj_cache["norm"] = normalize_adjacency(self.graph)
        return self._adj_cache["norm"]

    def with_split(self, split: SplitMask) -> "Dataset":
        ds = Dataset(self.graph, self.features, self.labels, self.num_classes, split, self.name)
        ds._adj_cache.update(self._adj_cache)
        return ds


def _read_rows(path: Path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n").split("\t") for line in fh if line.strip()]


def load_dataset(path) -> Dataset:
    """Load a dataset directory (meta.json, features/labels/edges/split TSVs)."""
    root = Path(path)
    files = ["meta.json", "features.tsv", "labels.tsv", "edges.tsv", "split.tsv"]
    for name in files:
        if not (root / name).is_file():
            raise MissingFileError(f"missing file: {root / name}")

    meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    n = int(meta["num_nodes"])
    d = int(meta["num_features"])
    c = int(meta["num_classes"])

    features = np.loadtxt(root / "features.tsv", delimiter="\t", dtype=np.float32, ndmin=2)
    if features.shape != (n, d):
        raise DimensionMismatchError(f"features.tsv is {features.shape}, meta says ({n}, {d})")

    labels = np.loadtxt(root / "labels.tsv", dtype=np.int64, ndmin=1)
    if labels.shape != (n,):
        raise DimensionMismatchError(f"labels.tsv has {labels.shape[0]} rows, meta says {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise LabelRangeError(f"label out of range [0, {c})")

    edges = _read_rows(root / "edges.tsv")
    if edges:
        pairs = np.array([[int(a), int(b)] for a, b in edges], dtype=np.int64)
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise DimensionMismatchError("edge endpoint outside [0, num_nodes)")
    graph = graph_from_edges(n, pairs[:, 0], pairs[:, 1])

    train, test = [], []
    seen = np.zeros(n, dtype=bool)
    for node, side in _read_rows(root / "split.tsv"):
        i = int(node)
        if not 0 <= i < n:
            raise SplitRangeError(f"split node id {i} out of range")
        if seen[i]:
            raise OverlappingSplitError(f"overlapping split at node {i}")
        seen[i] = True
        if side == "train":
            train.append(i)
        elif side == "test":
            test.append(i)
        else:
            raise DatasetError(f"unknown split side {side!r}")
    if not seen.all():
        raise SplitRangeError(f"split.tsv misses {int((~seen).sum())} nodes")

    return Dataset(graph, features, labels, c, SplitMask(train, test), name=root.name)


def save_dataset(ds: Dataset, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {"num_nodes": ds.num_nodes, "num_features": ds.num_features, "num_classes": ds.num_classes}
    (root / "meta.json").write_text(json.dumps(meta) + "\n", encoding="utf-8")
    np.savetxt(root / "features.tsv", ds.features, delimiter="\t", fmt="%.9g")
    np.savetxt(root / "labels.tsv", ds.labels, fmt="%d")
    upper = sp.triu(ds.graph.adjacency, k=1).tocoo()
    np.savetxt(root / "edges.tsv", np.column_stack([upper.row, upper.col]), delimiter="\t", fmt="%d")
    side = np.where(ds.split.membership(), "train", "test")
    with open(root / "split.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for i, s in enumerate(side):
            fh.write(f"{i}\t{s}\n")
    return root


def normalize_adjacency(graph: Graph) -> sp.csr_matrix:
    """Symmetric GCN normalization D^-1/2 (A + I) D^-1/2, self-loops added here."""
    n = graph.num_nodes
    a_hat = (graph.adjacency + sp.identity(n, dtype=np.float64, format="csr")).tocsr()
    deg = np.asarray(a_hat.sum(axis=1), dtype=np.float64).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d_inv = sp.diags(inv_sqrt)
    norm = (d_inv @ a_hat @ d_inv).tocsr()
    norm.sort_indices()
    return norm.astype(np.float32)


def sgc_propagate(adj: sp.csr_matrix, features: np.ndarray, k: int) -> np.ndarray:
    """Return adj^k @ features via k sparse-dense products."""
    if k < 0:
        raise ValueError("k must be non-negative")
    out = features
    for _ in range(k):
        out = np.asarray(adj @ out)
    return out


def split_nodes(n: int, train_fraction: float, seed: int) -> SplitMask:
    """Uniform random train/test partition with round-half-up train size."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = int(math.floor(n * train_fraction + 0.5))
    if n_train < 1 or n_train > n - 1:
        raise ValueError(f"degenerate split: {n_train} train nodes out of {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitMask(perm[:n_train], perm[n_train:])
