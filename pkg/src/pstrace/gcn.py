"""Numpy graph convolutional network.

Each layer computes ``Z = Â·H·W + b`` with ``Â = D^-1/2 (A + I) D^-1/2``;
hidden layers apply ReLU and the single-unit output layer a logistic sigmoid.
Training is full-batch gradient descent on masked binary cross-entropy with
hand-derived gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractViolation

if TYPE_CHECKING:
    from .graph import PaperGraph
    from .scoring import ScoreTable

EPS = 1e-7


class TrainingError(RuntimeError):
    pass


@dataclass(eq=False)
class Adjacency:
    """Sparse ``n x n`` matrix in coordinate form (duplicates already summed)."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_entries(cls, n: int, entries: Iterable[tuple[int, int, float]]) -> "Adjacency":
        acc: dict[tuple[int, int], float] = {}
        for r, c, w in entries:
            if not (0 <= r < n and 0 <= c < n):
                raise ContractViolation(f"entry ({r}, {c}) outside a {n}x{n} matrix")
            if not math.isfinite(w) or w < 0:
                raise ContractViolation(f"entry ({r}, {c}) has invalid weight {w}")
            acc[(r, c)] = acc.get((r, c), 0.0) + float(w)
        keys = sorted(acc)
        rows = np.array([k[0] for k in keys], dtype=np.int64)
        cols = np.array([k[1] for k in keys], dtype=np.int64)
        return cls(n, rows, cols, np.array([acc[k] for k in keys], dtype=np.float64))

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.weights.tolist()))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        np.add.at(out, (self.rows, self.cols), self.weights)
        return out

    def matmul(self, x: np.ndarray) -> np.ndarray:
        """``self @ x`` for a dense ``n x f`` matrix."""
        out = np.zeros((self.n, x.shape[1]))
        np.add.at(out, self.rows, self.weights[:, None] * x[self.cols])
        return out

    def rmatmul_t(self, x: np.ndarray) -> np.ndarray:
        """``self.T @ x``."""
        out = np.zeros((self.n, x.shape[1]))
        np.add.at(out, self.cols, self.weights[:, None] * x[self.rows])
        return out


@dataclass(eq=False)
class NormalizedAdjacency(Adjacency):
    degrees: np.ndarray = field(default_factory=lambda: np.zeros(0))


def normalize_adjacency(a: Adjacency, self_loops: bool = True) -> NormalizedAdjacency:
    """Symmetric normalization ``D^-1/2 (A [+ I]) D^-1/2`` with ``D`` the row sums.

    Without self-loops a zero-degree node contributes a zero row and column
    instead of dividing by zero.
    """
    entries = a.entries
    if self_loops:
        entries = entries + [(i, i, 1.0) for i in range(a.n)]
    m = Adjacency.from_entries(a.n, entries)
    degrees = np.zeros(a.n)
    np.add.at(degrees, m.rows, m.weights)
    inv_sqrt = np.zeros(a.n)
    nz = degrees > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(degrees[nz])
    weights = m.weights * inv_sqrt[m.rows] * inv_sqrt[m.cols]
    return NormalizedAdjacency(a.n, m.rows, m.cols, weights, degrees)


def block_diagonal(mats: Sequence[Adjacency]) -> Adjacency:
    """Disjoint union of several graphs as one block-diagonal matrix."""
    offset = 0
    rows, cols, weights = [], [], []
    for m in mats:
        rows.append(m.rows + offset)
        cols.append(m.cols + offset)
        weights.append(m.weights)
        offset += m.n
    if not mats:
        return Adjacency(0, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
    return Adjacency(offset, np.concatenate(rows), np.concatenate(cols), np.concatenate(weights))


# --- model --------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    layer_dims: tuple[int, ...]
    epochs: int = 100
    learning_rate: float = 0.1
    seed: int = 0
    self_loops: bool = True
    activation: str = "relu"

    def __post_init__(self) -> None:
        if len(self.layer_dims) < 2:
            raise ConfigError("layer_dims needs an input and an output size")
        if self.layer_dims[-1] != 1:
            raise ConfigError("the output layer must have a single unit")
        if any(d < 1 for d in self.layer_dims):
            raise ConfigError("layer sizes must be positive")
        if self.epochs < 0 or not self.learning_rate > 0:
            raise ConfigError("epochs must be >= 0 and learning_rate > 0")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    @classmethod
    def build(cls, input_dim: int, hidden: int = 64, num_layers: int = 2, **kw) -> "ModelConfig":
        return cls((input_dim,) + (hidden,) * (num_layers - 1) + (1,), **kw)


@dataclass(eq=False)
class GcnModel:
    config: ModelConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "GcnModel":
        return GcnModel(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_model(cfg: ModelConfig) -> GcnModel:
    """Hidden weights ~ U(-1/sqrt(f_in), 1/sqrt(f_in)); output weights and all biases start at zero.

    A zero output layer makes the untrained model score every node 0.5 while
    the hidden layers keep a random, symmetry-breaking start.
    """
    rng = np.random.default_rng(cfg.seed)
    weights, biases = [], []
    dims = cfg.layer_dims
    for layer, (f_in, f_out) in enumerate(zip(dims[:-1], dims[1:])):
        if layer == cfg.num_layers - 1:
            weights.append(np.zeros((f_in, f_out)))
        else:
            bound = 1.0 / math.sqrt(f_in)
            weights.append(rng.uniform(-bound, bound, size=(f_in, f_out)))
        biases.append(np.zeros(f_out))
    return GcnModel(cfg, weights, biases)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ForwardCache:
    a_hat: Adjacency
    weights: list[np.ndarray]
    inputs: list[np.ndarray]  # H^(l) fed to each layer
    pre_activations: list[np.ndarray]  # Z^(l)
    probabilities: np.ndarray


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def forward(model: GcnModel, a_hat: Adjacency, h0: np.ndarray) -> ForwardCache:
    h0 = np.asarray(h0, dtype=np.float64)
    if h0.ndim != 2 or h0.shape != (a_hat.n, model.config.layer_dims[0]):
        raise ContractViolation(
            f"features of shape {h0.shape} do not fit {a_hat.n} nodes x {model.config.layer_dims[0]} inputs"
        )
    inputs, pre = [], []
    h = h0
    last = model.config.num_layers - 1
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = a_hat.matmul(h @ w) + b
        pre.append(z)
        h = np.maximum(z, 0.0) if layer < last else z
    probs = sigmoid(pre[-1][:, 0])
    return ForwardCache(a_hat, model.weights, inputs, pre, probs)


def _mask_index(mask, n: int) -> np.ndarray:
    idx = np.asarray(sorted(mask) if isinstance(mask, (set, frozenset)) else mask)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    idx = idx.astype(np.int64)
    if idx.size == 0:
        raise ContractViolation("loss mask is empty")
    if idx.min() < 0 or idx.max() >= n:
        raise ContractViolation("loss mask addresses a node outside the graph")
    return idx


def loss_bce(probabilities: np.ndarray, labels: np.ndarray, mask) -> float:
    """Mean binary cross-entropy over masked nodes, probabilities clamped to [1e-7, 1-1e-7]."""
    p = np.asarray(probabilities, dtype=np.float64)
    idx = _mask_index(mask, p.shape[0])
    pm = np.clip(p[idx], EPS, 1.0 - EPS)
    y = np.asarray(labels, dtype=np.float64)[idx]
    return float(-np.mean(y * np.log(pm) + (1.0 - y) * np.log(1.0 - pm)))


def backward(cache: ForwardCache, labels: np.ndarray, mask) -> Gradients:
    p = cache.probabilities
    n = p.shape[0]
    idx = _mask_index(mask, n)
    y = np.asarray(labels, dtype=np.float64)
    dz = np.zeros((n, 1))
    live = (p[idx] > EPS) & (p[idx] < 1.0 - EPS)
    dz[idx[live], 0] = (p[idx[live]] - y[idx[live]]) / idx.size

    grads_w: list[np.ndarray] = [None] * len(cache.weights)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(cache.weights)  # type: ignore[list-item]
    for layer in range(len(cache.weights) - 1, -1, -1):
        g = cache.a_hat.rmatmul_t(dz)
        grads_w[layer] = cache.inputs[layer].T @ g
        grads_b[layer] = dz.sum(axis=0)
        if layer > 0:
            dz = (g @ cache.weights[layer].T) * (cache.pre_activations[layer - 1] > 0)
    return Gradients(grads_w, grads_b)


# --- training -----------------------------------------------------------------


@dataclass
class GraphBatch:
    """One graph's training inputs: normalized adjacency, features, labels and loss mask."""

    a_hat: Adjacency
    features: np.ndarray
    labels: np.ndarray
    mask: np.ndarray


@dataclass
class TrainResult:
    model: GcnModel
    loss_trace: list[float]


def _step(model: GcnModel, batches: Sequence[GraphBatch]) -> tuple[float, Gradients]:
    total = sum(int(_mask_index(b.mask, b.a_hat.n).size) for b in batches)
    loss = 0.0
    gw = [np.zeros_like(w) for w in model.weights]
    gb = [np.zeros_like(b) for b in model.biases]
    for b in batches:
        share = _mask_index(b.mask, b.a_hat.n).size / total
        cache = forward(model, b.a_hat, b.features)
        loss += share * loss_bce(cache.probabilities, b.labels, b.mask)
        g = backward(cache, b.labels, b.mask)
        for i in range(len(gw)):
            gw[i] += share * g.weights[i]
            gb[i] += share * g.biases[i]
    return loss, Gradients(gw, gb)


def train_graphs(cfg: ModelConfig, batches: Sequence[GraphBatch], model: GcnModel | None = None) -> TrainResult:
    """Full-batch gradient descent over several disjoint graphs with shared weights.

    The objective is the mean loss over all masked nodes, so the result equals
    training on the block-diagonal union of the graphs.
    """
    batches = [b for b in batches if np.asarray(b.mask).size]
    model = (model or init_model(cfg)).copy()
    trace: list[float] = []
    if not batches:
        if cfg.epochs:
            raise ContractViolation("no labeled nodes to train on")
        return TrainResult(model, trace)
    for epoch in range(cfg.epochs):
        loss, grads = _step(model, batches)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        trace.append(loss)
        for i in range(len(model.weights)):
            model.weights[i] -= cfg.learning_rate * grads.weights[i]
            model.biases[i] -= cfg.learning_rate * grads.biases[i]
    return TrainResult(model, trace)


def train(cfg: ModelConfig, a_hat: Adjacency, h0: np.ndarray, labels: np.ndarray, mask) -> TrainResult:
    return train_graphs(cfg, [GraphBatch(a_hat, np.asarray(h0, dtype=np.float64), np.asarray(labels), _mask_index(mask, a_hat.n))])


# --- persistence ----------------------------------------------------------------


def checkpoint_dict(model: GcnModel) -> dict:
    cfg = model.config
    return {
        "layer_dims": list(cfg.layer_dims),
        "activation": cfg.activation,
        "self_loops": cfg.self_loops,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "weights": [w.ravel(order="C").tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def save_checkpoint(model: GcnModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model)), encoding="utf-8")


def load_checkpoint(path: str | Path) -> GcnModel:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = ModelConfig(
        tuple(d["layer_dims"]),
        epochs=d["epochs"],
        learning_rate=d["learning_rate"],
        seed=d["seed"],
        self_loops=d["self_loops"],
        activation=d["activation"],
    )
    dims = cfg.layer_dims
    weights = [np.array(w, dtype=np.float64).reshape(a, b) for w, a, b in zip(d["weights"], dims[:-1], dims[1:])]
    biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
    return GcnModel(cfg, weights, biases)


def write_loss_trace(trace: Sequence[float], path: str | Path) -> None:
    lines = ["epoch,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(trace)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def predict_scores(model: GcnModel, graphs: Sequence[tuple["PaperGraph", np.ndarray]], tag: str = "gcn") -> "ScoreTable":
    """Score every reference node of each paper graph."""
    from .graph import to_adjacency
    from .scoring import ScoreTable

    scores: dict[str, dict[str, float]] = {}
    for graph, features in graphs:
        a_hat = normalize_adjacency(to_adjacency(graph), model.config.self_loops)
        probs = forward(model, a_hat, features).probabilities
        scores[graph.paper_id] = {graph.nodes[i].ref_id: float(probs[i]) for i in graph.reference_mask}
    return ScoreTable(tag, scores)
