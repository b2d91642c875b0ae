"""Convert LINQS-style ``.content`` / ``.cites`` citation graphs (Cora, CiteSeer)
into the dataset directory format."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .graph import Dataset, graph_from_edges, save_dataset, split_nodes


def read_linqs(content_path, cites_path, train_fraction: float = 0.5, seed: int = 0, name: str = "cora") -> Dataset:
    ids, rows, names = [], [], []
    with open(content_path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:-1]])
            names.append(parts[-1])
    index = {paper: i for i, paper in enumerate(ids)}
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names], dtype=np.int64)
    features = np.asarray(rows, dtype=np.float32)

    src, dst = [], []
    with open(cites_path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            # a handful of CiteSeer citations point at papers missing from .content
            if len(parts) != 2 or parts[0] not in index or parts[1] not in index:
                continue
            src.append(index[parts[0]])
            dst.append(index[parts[1]])

    n = len(ids)
    graph = graph_from_edges(n, src, dst)
    return Dataset(graph, features, labels, len(classes), split_nodes(n, train_fraction, seed), name=name)


def convert_linqs(content_path, cites_path, out_dir, train_fraction: float = 0.5, seed: int = 0) -> Path:
    ds = read_linqs(content_path, cites_path, train_fraction, seed, name=Path(out_dir).name)
    return save_dataset(ds, out_dir)
