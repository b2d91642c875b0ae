"""Dense numerical core: fixed GCN/SGC/MLP architectures with hand-written backprop,
cross-entropy and KL losses, Adam, finite-difference checks and checkpoints."""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import sgc_propagate

__all__ = [
    "Kind",
    "ModelParams",
    "TrainHyper",
    "AdamState",
    "init_params",
    "default_dims",
    "forward",
    "forward_tape",
    "backward",
    "softmax",
    "softmax_xent",
    "kl_loss",
    "adam_step",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]


class Kind(str, enum.Enum):
    GCN = "GCN"
    SGC = "SGC"
    MLP = "MLP"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value.lower() == value.lower():
                    return member
        return None


@dataclass
class ModelParams:
    """Weights and biases of one fixed-architecture model.

    ``k`` is only read by SGC (number of propagation steps).
    """

    kind: Kind
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    k: int = 2

    def __post_init__(self):
        self.kind = Kind(self.kind)
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i} input dim {w.shape[0]} != previous output dim")
        if self.kind is Kind.SGC and len(self.weights) != 1:
            raise ValueError("SGC is a single linear layer")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def hidden_dims(self) -> list[int]:
        return self.dims[1:-1]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        """Parameters in canonical order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> "ModelParams":
        return replace(self, weights=list(arrays[0::2]), biases=list(arrays[1::2]))

    def copy(self) -> "ModelParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def astype(self, dtype) -> "ModelParams":
        return self.with_arrays([a.astype(dtype) for a in self.arrays()])

    def equals(self, other: "ModelParams") -> bool:
        """Bit-exact equality of kind, k and every parameter array."""
        if self.kind is not other.kind or self.k != other.k or self.dims != other.dims:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass(frozen=True)
class TrainHyper:
    """Optimisation and flattening hyperparameters shared by every training regime.

    Widths, learning rate, weight decay and epoch count are conventional
    node-classification defaults, not values taken from published experiments.
    """

    learning_rate: float = 0.01
    epochs: int = 200
    loss_threshold: float = 0.5
    flatten_param: float = 0.7
    weight_decay: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 < self.flatten_param <= 1.0:
            raise ValueError("flatten_param must lie in (0, 1]")

    def check_classes(self, num_classes: int) -> None:
        if not self.flatten_param > 1.0 / num_classes:
            raise ValueError(
                f"flatten_param {self.flatten_param} must exceed 1/C = {1.0 / num_classes:.4f}"
            )


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def default_dims(kind, num_features: int, num_classes: int, hidden: int = 16) -> list[int]:
    kind = Kind(kind)
    if kind is Kind.GCN:
        return [num_features, hidden, num_classes]
    if kind is Kind.SGC:
        return [num_features, num_classes]
    return [num_features, hidden, hidden, num_classes]


def init_params(kind, dims, seed: int, k: int = 2, dtype=np.float32) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    kind = Kind(kind)
    dims = [int(x) for x in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"dims {dims} do not describe a network")
    if kind is Kind.SGC and len(dims) != 2:
        raise ValueError("SGC takes dims [in, out]")
    if kind is Kind.GCN and len(dims) < 2:
        raise ValueError("GCN needs at least one layer")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return ModelParams(kind, weights, biases, k=k)


@dataclass
class _Tape:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    masks: list = field(default_factory=list)


def forward_tape(params: ModelParams, adj, features, dropout: float = 0.0, rng=None):
    """Forward pass that also records what backward() needs."""
    if features.shape[1] != params.dims[0]:
        raise ValueError(f"feature dim {features.shape[1]} != model input dim {params.dims[0]}")
    tape = _Tape()
    kind = params.kind
    h = features
    if kind is Kind.SGC:
        h = sgc_propagate(adj, features, params.k)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(h)
        z = h @ w
        if kind is Kind.GCN:
            z = np.asarray(adj @ z)
        z = z + b
        tape.pre.append(z)
        if i == last:
            return z, tape
        h = np.maximum(z, 0)
        if dropout > 0.0:
            keep = (rng.random(h.shape) >= dropout).astype(h.dtype) / (1.0 - dropout)
            h = h * keep
            tape.masks.append(keep)
        else:
            tape.masks.append(None)


def forward(params: ModelParams, adj, features) -> np.ndarray:
    """Logits for every node. MLP never touches ``adj``."""
    logits, _ = forward_tape(params, adj, features)
    return logits


def backward(params: ModelParams, adj, tape: _Tape, dlogits: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients (W0, b0, W1, b1, ...) given dL/dlogits."""
    grads: list[np.ndarray] = [None] * (2 * len(params.weights))
    dz = dlogits
    for i in range(len(params.weights) - 1, -1, -1):
        if params.kind is Kind.GCN:
            # adj is symmetric, so adj.T @ dz == adj @ dz
            dz_prop = np.asarray(adj @ dz)
        else:
            dz_prop = dz
        grads[2 * i] = tape.inputs[i].T @ dz_prop
        grads[2 * i + 1] = dz.sum(axis=0)
        if i == 0:
            break
        dh = dz_prop @ params.weights[i].T
        mask = tape.masks[i - 1]
        if mask is not None:
            dh = dh * mask
        dz = dh * (tape.pre[i - 1] > 0)
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _as_target_rows(targets, m: int, num_classes: int) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.ndim == 1:
        if targets.shape[0] != m:
            raise ValueError(f"{targets.shape[0]} hard labels for {m} nodes")
        rows = np.zeros((m, num_classes), dtype=np.float64)
        rows[np.arange(m), targets.astype(np.int64)] = 1.0
        return rows
    if targets.shape != (m, num_classes):
        raise ValueError(f"target matrix {targets.shape} != ({m}, {num_classes})")
    return targets.astype(np.float64)


def softmax_xent(logits, targets, node_ids, weights=None):
    """Cross-entropy of softmax(logits) against hard labels or soft rows on ``node_ids``.

    Returns (mean loss, per-node losses, gradient w.r.t. the full logits matrix).
    Optional per-node ``weights`` turn the mean into a weighted mean.
    """
    node_ids = np.asarray(node_ids, dtype=np.int64)
    m = node_ids.shape[0]
    if m == 0:
        raise ValueError("empty node set")
    sub = logits[node_ids].astype(np.float64)
    t = _as_target_rows(targets, m, logits.shape[1])
    logp = _log_softmax(sub)
    per_node = -(t * logp).sum(axis=1)
    if weights is None:
        w = np.full(m, 1.0 / m)
    else:
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
    loss = float((w * per_node).sum())
    grad = np.zeros(logits.shape, dtype=logits.dtype)
    grad[node_ids] = ((np.exp(logp) - t) * w[:, None]).astype(logits.dtype)
    return loss, per_node, grad


def kl_loss(student_logits, teacher_probs, node_ids):
    """Mean KL(teacher || softmax(student)) over ``node_ids`` and its logit gradient.

    ``teacher_probs`` has one row per entry of ``node_ids``.
    """
    node_ids = np.asarray(node_ids, dtype=np.int64)
    m = node_ids.shape[0]
    if m == 0:
        raise ValueError("empty node set")
    t = np.asarray(teacher_probs, dtype=np.float64)
    if t.shape != (m, student_logits.shape[1]):
        raise ValueError(f"teacher matrix {t.shape} does not match {m} student rows")
    if (t < -1e-4).any() or np.abs(t.sum(axis=1) - 1.0).max() > 1e-4:
        raise ValueError("teacher rows must lie on the probability simplex")
    logp = _log_softmax(student_logits[node_ids].astype(np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_log_t = np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0)), 0.0)
    loss = float((t_log_t - t * logp).sum() / m)
    grad = np.zeros(student_logits.shape, dtype=student_logits.dtype)
    grad[node_ids] = ((np.exp(logp) - t) / m).astype(student_logits.dtype)
    return loss, grad


def adam_step(params: ModelParams, grads, state: AdamState, hyper: TrainHyper):
    """One Adam update with bias correction; weight decay enters as an L2 gradient term."""
    arrays = params.arrays()
    if len(grads) != len(arrays) or len(state.m) != len(arrays):
        raise ValueError("gradient/state count does not match parameters")
    step = state.step + 1
    b1, b2 = hyper.adam_beta1, hyper.adam_beta2
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    new_arrays, new_m, new_v = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        g = g.astype(p.dtype, copy=False)
        if hyper.weight_decay:
            g = g + hyper.weight_decay * p
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = hyper.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + hyper.adam_eps)
        new_arrays.append((p - update).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
    return params.with_arrays(new_arrays), AdamState(new_m, new_v, step)


def _loss_only(params, adj, features, targets, node_ids) -> float:
    return softmax_xent(forward(params, adj, features), targets, node_ids)[0]


def grad_check(params: ModelParams, adj, features, targets, node_ids, eps: float = 1e-4) -> float:
    """Max relative error between backprop and central differences, in float64."""
    p64 = params.astype(np.float64)
    adj64 = sp.csr_matrix(adj, dtype=np.float64) if adj is not None else None
    x64 = np.asarray(features, dtype=np.float64)
    logits, tape = forward_tape(p64, adj64, x64)
    _, _, dlogits = softmax_xent(logits, targets, node_ids)
    analytic = backward(p64, adj64, tape, dlogits)

    worst = 0.0
    arrays = p64.arrays()
    for a_idx, arr in enumerate(arrays):
        for flat in range(arr.size):
            idx = np.unravel_index(flat, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + eps
            up = _loss_only(p64, adj64, x64, targets, node_ids)
            arr[idx] = orig - eps
            down = _loss_only(p64, adj64, x64, targets, node_ids)
            arr[idx] = orig
            numeric = (up - down) / (2 * eps)
            exact = analytic[a_idx][idx]
            denom = max(abs(numeric), abs(exact), 1e-6)
            worst = max(worst, abs(numeric - exact) / denom)
    return worst


_MAGIC = b"GTDCKPT1"


def save_checkpoint(path, params: ModelParams, seed: int = 0, epoch: int = 0) -> Path:
    """JSON header line, then every parameter as little-endian float32 in canonical order."""
    path = Path(path)
    header = {
        "kind": params.kind.value,
        "dims": params.dims,
        "k": params.k,
        "seed": int(seed),
        "epoch": int(epoch),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    block = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in params.arrays())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(block)
    return path


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    block = np.frombuffer(raw[12 + hlen :], dtype="<f4")
    dims = header["dims"]
    arrays, offset = [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            size = int(np.prod(shape))
            arrays.append(block[offset : offset + size].reshape(shape).astype(np.float32))
            offset += size
    if offset != block.size:
        raise ValueError("checkpoint parameter block has the wrong length")
    params = ModelParams(Kind(header["kind"]), arrays[0::2], arrays[1::2], k=header["k"])
    return params, header
