"""Two-community contextual stochastic block model with a single homophily knob ``phi``.

``phi`` trades feature informativeness (mu) against topology informativeness
(lambda): phi = 0 leaves only features informative, |phi| = 1 only edges, and
the sign picks homophily (+) or heterophily (-).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import Dataset, graph_from_edges, save_dataset, split_nodes


class CsbmRegimeError(ValueError):
    pass


@dataclass(frozen=True)
class CsbmConfig:
    n: int = 1000
    avg_degree: float = 20.0
    f: int = 100
    phi: float = 0.0
    epsilon: float = 15.0
    seed: int = 0
    train_fraction: float = 0.5

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise ValueError("n must be even (two balanced communities)")
        if not -1.0 <= self.phi <= 1.0:
            raise ValueError("phi must lie in [-1, 1]")
        if self.epsilon < 0 or self.avg_degree <= 0 or self.f < 1:
            raise ValueError("epsilon >= 0, avg_degree > 0 and f >= 1 required")


@dataclass(frozen=True)
class CsbmParams:
    mu: float
    lam: float

    def edge_probabilities(self, cfg: CsbmConfig) -> tuple[float, float]:
        """(intra-class, inter-class) edge probabilities."""
        d = cfg.avg_degree
        root = math.sqrt(d)
        return (d + self.lam * root) / cfg.n, (d - self.lam * root) / cfg.n


def csbm_params(cfg: CsbmConfig) -> CsbmParams:
    angle = cfg.phi * math.pi / 2
    cos, sin = math.cos(angle), math.sin(angle)
    # math.cos(pi/2) is ~6e-17, so pin the quarter turns to their exact values
    if abs(cfg.phi) == 1.0:
        cos, sin = 0.0, math.copysign(1.0, cfg.phi)
    mu = math.sqrt(cfg.n / cfg.f * (1 + cfg.epsilon)) * cos
    lam = math.sqrt(1 + cfg.epsilon) * sin
    if abs(lam) > math.sqrt(cfg.avg_degree):
        raise CsbmRegimeError(
            f"invalid cSBM regime: |lambda| = {abs(lam):.4f} exceeds sqrt(d) = {math.sqrt(cfg.avg_degree):.4f}"
        )
    return CsbmParams(mu, lam)


def gen_csbm(cfg: CsbmConfig) -> Dataset:
    params = csbm_params(cfg)
    n, f = cfg.n, cfg.f
    rng = np.random.default_rng([cfg.seed, 0xC5B])

    labels = np.repeat([0, 1], n // 2)
    labels = labels[rng.permutation(n)]
    sign = np.where(labels == 0, -1.0, 1.0)

    u = rng.normal(0.0, 1.0 / math.sqrt(f), size=f)
    z = rng.normal(size=(n, f))
    features = math.sqrt(params.mu / n) * sign[:, None] * u[None, :] + z / math.sqrt(f)

    p_in, p_out = params.edge_probabilities(cfg)
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, p_in, p_out)
    keep = rng.random(iu.shape[0]) < prob
    graph = graph_from_edges(n, iu[keep], ju[keep])

    split = split_nodes(n, cfg.train_fraction, cfg.seed)
    name = f"csbm_phi{cfg.phi:+.2f}_seed{cfg.seed}"
    return Dataset(graph, features.astype(np.float32), labels.astype(np.int64), 2, split, name=name)


def write_csbm(cfg: CsbmConfig, out_dir) -> Path:
    """Materialize the generated dataset plus a provenance.json next to it."""
    ds = gen_csbm(cfg)
    root = save_dataset(ds, out_dir)
    params = csbm_params(cfg)
    p_in, p_out = params.edge_probabilities(cfg)
    provenance = {
        "config": asdict(cfg),
        "mu": params.mu,
        "lambda": params.lam,
        "p_intra": p_in,
        "p_inter": p_out,
        "construction": "x_i = sqrt(mu/n) * sigma_i * u + z_i / sqrt(f); u ~ N(0, I/f); "
        "p_intra = (d + lambda*sqrt(d))/n, p_inter = (d - lambda*sqrt(d))/n",
        "num_edges": ds.graph.num_edges,
    }
    (root / "provenance.json").write_text(json.dumps(provenance, indent=2) + "\n", encoding="utf-8")
    return root
