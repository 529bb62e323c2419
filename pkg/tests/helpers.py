"""Independent dense-matrix oracles shared by the unit and acceptance tests."""

import random

import numpy as np

from pstrace import CIT
from pstrace.corpus import CitationMarker, Paragraph, Section, TeiDocument
from pstrace.gcn import Adjacency, GcnModel, ModelConfig


def dense_normalize(a: np.ndarray, self_loops: bool = True) -> np.ndarray:
    m = a + np.eye(len(a)) if self_loops else a.copy()
    d = m.sum(axis=1)
    out = np.zeros_like(m)
    for i in range(len(m)):
        for j in range(len(m)):
            if m[i, j] and d[i] > 0 and d[j] > 0:
                out[i, j] = m[i, j] / np.sqrt(d[i] * d[j])
    return out


def dense_forward(weights, biases, a_hat: np.ndarray, h: np.ndarray) -> np.ndarray:
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = (a_hat @ h) @ w + b
        h = np.maximum(z, 0) if k < len(weights) - 1 else z
    return 1.0 / (1.0 + np.exp(-h[:, 0]))


def dense_loss(weights, biases, a_hat, h, labels, mask) -> float:
    p = np.clip(dense_forward(weights, biases, a_hat, h)[mask], 1e-7, 1 - 1e-7)
    y = labels[mask]
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def finite_difference(model: GcnModel, a_hat_dense, h, labels, mask, step=1e-5):
    """Central differences of the dense-oracle loss for every weight and bias."""
    ws = [w.copy() for w in model.weights]
    bs = [b.copy() for b in model.biases]
    grads_w, grads_b = [], []
    for params, grads in ((ws, grads_w), (bs, grads_b)):
        for arr in params:
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + step
                up = dense_loss(ws, bs, a_hat_dense, h, labels, mask)
                arr[idx] = orig - step
                down = dense_loss(ws, bs, a_hat_dense, h, labels, mask)
                arr[idx] = orig
                g[idx] = (up - down) / (2 * step)
            grads.append(g)
    return grads_w, grads_b


def max_relative_error(analytic, numeric, floor=1e-6) -> float:
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def random_adjacency(rng: np.random.Generator, n: int, p: float = 0.35) -> Adjacency:
    entries = [(i, j, 1.0) for i in range(n) for j in range(n) if i != j and rng.random() < p]
    return Adjacency.from_entries(n, entries)


def random_model(rng: np.random.Generator, dims, scale=0.7) -> GcnModel:
    cfg = ModelConfig(tuple(dims))
    weights = [rng.normal(0, scale, size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [rng.normal(0, 0.1, size=b) for b in dims[1:]]
    return GcnModel(cfg, weights, biases)


def two_cluster_toy(seed: int = 0, n_per: int = 10, f: int = 8):
    """Two dense 10-node clusters joined by one edge; features separated by cluster mean."""
    rng = np.random.default_rng(seed)
    n = 2 * n_per
    entries = []
    for c in range(2):
        idx = range(c * n_per, (c + 1) * n_per)
        entries += [(i, j, 1.0) for i in idx for j in idx if i != j and rng.random() < 0.5]
    entries += [(0, n_per, 1.0), (n_per, 0, 1.0)]
    a = Adjacency.from_entries(n, entries)
    centers = rng.normal(0, 1, size=(2, f))
    labels = np.array([1.0] * n_per + [0.0] * n_per)
    h = np.vstack([centers[0] + 0.3 * rng.normal(size=(n_per, f)), centers[1] + 0.3 * rng.normal(size=(n_per, f))])
    return a, h, labels


def brute_force_ap(scores, positives):
    """AP straight from the definition: a positive's rank is 1 + the number of
    items that beat it (higher score, or equal score with a smaller ref_id)."""
    from fractions import Fraction

    def beats(x, y):
        return x[1] > y[1] or (x[1] == y[1] and x[0] < y[0])

    total = Fraction(0)
    for p in scores:
        if p[0] not in positives:
            continue
        ahead = [q for q in scores if beats(q, p)]
        rank = len(ahead) + 1
        hits = 1 + sum(1 for q in ahead if q[0] in positives)
        total += Fraction(hits, rank)
    return float(total / len(positives))


def random_doc(rng: random.Random, n_keys: int):
    sections = []
    for s in range(rng.randint(0, 3)):
        paras = []
        for _ in range(rng.randint(1, 3)):
            sentences = []
            for _ in range(rng.randint(1, 5)):
                words = ["Word"] + ["x" * rng.randint(1, 9) for _ in range(rng.randint(2, 25))]
                for _ in range(rng.randint(0, 2)):
                    words.insert(rng.randint(1, len(words)), CIT)
                sentences.append(" ".join(words) + ".")
            text = " ".join(sentences)
            markers, pos = [], 0
            while (i := text.find(CIT, pos)) >= 0:
                markers.append(CitationMarker(f"b{rng.randrange(n_keys)}", (i, i + len(CIT))))
                pos = i + 1
            paras.append(Paragraph(text, tuple(markers)))
        sections.append(Section(f"S{s}", tuple(paras)))
    return TeiDocument("T", "abstract" if rng.random() < 0.5 else "", tuple(sections))
