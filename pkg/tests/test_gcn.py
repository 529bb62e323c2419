import math

import numpy as np
import pytest

from helpers import (
    dense_forward,
    dense_normalize,
    finite_difference,
    max_relative_error,
    random_adjacency,
    random_model,
    two_cluster_toy,
)
from pstrace.errors import ConfigError, ContractViolation
from pstrace.gcn import (
    Adjacency,
    GcnModel,
    GraphBatch,
    ModelConfig,
    TrainingError,
    backward,
    block_diagonal,
    forward,
    init_model,
    load_checkpoint,
    loss_bce,
    normalize_adjacency,
    save_checkpoint,
    train,
    train_graphs,
    write_loss_trace,
)


def adj(n, edges):
    return Adjacency.from_entries(n, [(d, s, 1.0) for s, d in edges])


class TestNormalize:
    def test_two_nodes_self_loops(self):
        m = normalize_adjacency(adj(2, [(0, 1), (1, 0)])).to_dense()
        np.testing.assert_allclose(m, 0.5, atol=1e-15)

    def test_two_nodes_no_self_loops(self):
        m = normalize_adjacency(adj(2, [(0, 1), (1, 0)]), self_loops=False).to_dense()
        np.testing.assert_array_equal(m, [[0, 1], [1, 0]])

    def test_star(self):
        m = normalize_adjacency(adj(3, [(0, 1), (1, 0), (0, 2), (2, 0)])).to_dense()
        # degrees of A+I are (3, 2, 2)
        assert m[0, 1] == pytest.approx(1 / math.sqrt(6), abs=1e-12)
        assert m[0, 1] == pytest.approx(0.408248290463863, abs=1e-12)
        assert m[1, 1] == pytest.approx(0.5, abs=1e-12)
        assert m[0, 0] == pytest.approx(1 / 3, abs=1e-12)
        assert m[1, 2] == 0

    def test_isolated_without_self_loops(self):
        m = normalize_adjacency(adj(3, [(0, 1)]), self_loops=False)
        assert np.all(np.isfinite(m.to_dense()))
        assert m.degrees.tolist() == [0, 1, 0]

    def test_properties_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 12))
            a = random_adjacency(rng, n)
            sym = Adjacency.from_entries(n, [(r, c, 1.0) for r, c, _ in a.entries] + [(c, r, 1.0) for r, c, _ in a.entries if (c, r) not in set(zip(a.rows.tolist(), a.cols.tolist()))])
            m = normalize_adjacency(sym)
            dense = m.to_dense()
            np.testing.assert_allclose(dense, dense.T, atol=1e-15)
            assert dense.max() <= 1 + 1e-15
            np.testing.assert_allclose(np.diag(dense), 1 / m.degrees, atol=1e-15)
            np.testing.assert_allclose(dense, dense_normalize(sym.to_dense()), atol=1e-14)


def test_sparse_products_match_dense():
    rng = np.random.default_rng(1)
    a = random_adjacency(rng, 9)
    x = rng.normal(size=(9, 4))
    np.testing.assert_allclose(a.matmul(x), a.to_dense() @ x, atol=1e-14)
    np.testing.assert_allclose(a.rmatmul_t(x), a.to_dense().T @ x, atol=1e-14)


def test_adjacency_validation():
    with pytest.raises(ContractViolation):
        Adjacency.from_entries(2, [(0, 2, 1.0)])
    with pytest.raises(ContractViolation):
        Adjacency.from_entries(2, [(0, 1, -1.0)])


class TestForward:
    def test_zero_model_half(self):
        model = GcnModel(ModelConfig((3, 4, 1)), [np.zeros((3, 4)), np.zeros((4, 1))], [np.zeros(4), np.zeros(1)])
        a = normalize_adjacency(adj(5, [(0, 1), (2, 3)]))
        p = forward(model, a, np.ones((5, 3))).probabilities
        np.testing.assert_array_equal(p, 0.5)

    def test_single_node(self):
        w, x = 0.7, 1.3
        model = GcnModel(ModelConfig((1, 1)), [np.array([[w]])], [np.zeros(1)])
        a = normalize_adjacency(Adjacency.from_entries(1, []))
        assert a.to_dense()[0, 0] == 1.0
        [p] = forward(model, a, np.array([[x]])).probabilities
        assert p == pytest.approx(1 / (1 + math.exp(-x * w)), abs=1e-15)

    def test_two_node_hand_weights(self):
        model = GcnModel(
            ModelConfig((2, 2, 1)),
            [np.array([[1.0, -1.0], [0.5, 2.0]]), np.array([[1.5], [-0.5]])],
            [np.array([0.1, -0.2]), np.array([0.3])],
        )
        a = normalize_adjacency(adj(2, [(0, 1), (1, 0)]))
        h = np.array([[1.0, 2.0], [-1.0, 0.5]])
        p = forward(model, a, h).probabilities
        np.testing.assert_allclose(p, dense_forward(model.weights, model.biases, np.full((2, 2), 0.5), h), atol=1e-12)

    def test_random_vs_dense(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            n = int(rng.integers(1, 21))
            model = random_model(rng, (5, 6, 3, 1))
            a = random_adjacency(rng, n)
            h = rng.normal(size=(n, 5))
            p = forward(model, normalize_adjacency(a), h).probabilities
            oracle = dense_forward(model.weights, model.biases, dense_normalize(a.to_dense()), h)
            np.testing.assert_allclose(p, oracle, rtol=0, atol=1e-12)
            assert np.all((p > 0) & (p < 1))

    def test_dim_mismatch(self):
        model = init_model(ModelConfig((3, 1)))
        with pytest.raises(ContractViolation):
            forward(model, normalize_adjacency(adj(2, [])), np.ones((2, 4)))


class TestLoss:
    def test_half(self):
        assert loss_bce(np.full(4, 0.5), np.array([0, 1, 0, 1]), [0, 1, 2, 3]) == pytest.approx(math.log(2), abs=1e-12)

    def test_perfect(self):
        assert loss_bce(np.array([1.0, 0.0]), np.array([1, 0]), [0, 1]) < 1e-6

    def test_hand_value(self):
        expected = -(math.log(0.9) + math.log(0.8)) / 2
        assert expected == pytest.approx(0.164252, abs=1e-6)
        assert loss_bce(np.array([0.9, 0.2]), np.array([1, 0]), [0, 1]) == pytest.approx(expected, abs=1e-15)

    def test_mask_subset_and_empty(self):
        assert loss_bce(np.array([0.9, 0.01]), np.array([1, 1]), [0]) == pytest.approx(-math.log(0.9))
        with pytest.raises(ContractViolation):
            loss_bce(np.array([0.5]), np.array([1]), [])


class TestBackward:
    def test_finite_difference(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n = int(rng.integers(2, 9))
            model = random_model(rng, (4, 5, 1))
            a = random_adjacency(rng, n)
            h = rng.normal(size=(n, 4))
            labels = rng.integers(0, 2, size=n).astype(float)
            mask = np.flatnonzero(rng.random(n) < 0.7)
            if mask.size == 0:
                mask = np.array([0])
            a_hat = normalize_adjacency(a)
            g = backward(forward(model, a_hat, h), labels, mask)
            fw, fb = finite_difference(model, dense_normalize(a.to_dense()), h, labels, mask)
            assert max_relative_error(g.weights + g.biases, fw + fb) < 1e-4

    def test_zero_at_perfect_fit(self):
        model = GcnModel(ModelConfig((1, 1)), [np.array([[40.0]])], [np.zeros(1)])
        a = normalize_adjacency(Adjacency.from_entries(2, []))
        h = np.array([[1.0], [-1.0]])
        g = backward(forward(model, a, h), np.array([1.0, 0.0]), [0, 1])
        assert not g.weights[0].any() and not g.biases[0].any()

    def test_single_node_mask_closed_form(self):
        rng = np.random.default_rng(4)
        n = 6
        a = random_adjacency(rng, n)
        a_hat = normalize_adjacency(a)
        model = random_model(rng, (3, 1))
        h = rng.normal(size=(n, 3))
        labels = rng.integers(0, 2, n).astype(float)
        i = 2
        g = backward(forward(model, a_hat, h), labels, [i])
        agg = (a_hat.to_dense() @ h)[i]
        p = 1 / (1 + math.exp(-(agg @ model.weights[0][:, 0] + model.biases[0][0])))
        np.testing.assert_allclose(g.weights[0][:, 0], (p - labels[i]) * agg, atol=1e-14)
        assert g.biases[0][0] == pytest.approx(p - labels[i], abs=1e-14)

    def test_masked_out_nodes_do_not_contribute(self):
        rng = np.random.default_rng(5)
        a_hat = normalize_adjacency(random_adjacency(rng, 6))
        model = random_model(rng, (3, 4, 1))
        h = rng.normal(size=(6, 3))
        y1 = np.array([1, 0, 1, 0, 1, 0.0])
        y2 = y1.copy()
        y2[4:] = 1 - y2[4:]
        cache = forward(model, a_hat, h)
        g1, g2 = backward(cache, y1, [0, 1, 2, 3]), backward(cache, y2, [0, 1, 2, 3])
        for x, y in zip(g1.weights + g1.biases, g2.weights + g2.biases):
            np.testing.assert_array_equal(x, y)


class TestTrain:
    def test_toy_learns(self):
        a, h, y = two_cluster_toy(0)
        cfg = ModelConfig((8, 16, 1), epochs=500, learning_rate=0.1, seed=0)
        res = train(cfg, normalize_adjacency(a), h, y, np.arange(20))
        assert res.loss_trace[-1] < 0.05
        assert len(res.loss_trace) == 500

    def test_epochs_zero_returns_init(self):
        cfg = ModelConfig((4, 3, 1), epochs=0, seed=9)
        res = train(cfg, normalize_adjacency(adj(2, [])), np.ones((2, 4)), np.array([1, 0]), [0, 1])
        init = init_model(cfg)
        assert res.loss_trace == []
        for w, w0 in zip(res.model.weights, init.weights):
            np.testing.assert_array_equal(w, w0)

    def test_deterministic(self):
        a, h, y = two_cluster_toy(1)
        cfg = ModelConfig((8, 6, 1), epochs=50, learning_rate=0.1, seed=3)
        r1 = train(cfg, normalize_adjacency(a), h, y, np.arange(20))
        r2 = train(cfg, normalize_adjacency(a), h, y, np.arange(20))
        assert r1.loss_trace == r2.loss_trace

    def test_monotone_descent_small_lr(self):
        a, h, y = two_cluster_toy(2)
        cfg = ModelConfig((8, 16, 1), epochs=300, learning_rate=0.01, seed=0)
        trace = train(cfg, normalize_adjacency(a), h, y, np.arange(20)).loss_trace
        assert all(b <= a_ + 1e-12 for a_, b in zip(trace, trace[1:]))

    def test_non_finite_aborts(self):
        cfg = ModelConfig((1, 1), epochs=3, learning_rate=0.1)
        with pytest.raises(TrainingError, match="epoch 0"):
            train(cfg, normalize_adjacency(adj(1, [])), np.array([[np.nan]]), np.array([1.0]), [0])

    def test_multi_graph_equals_disjoint_union(self):
        rng = np.random.default_rng(6)
        graphs = []
        for n in (5, 7):
            a = random_adjacency(rng, n)
            graphs.append((a, rng.normal(size=(n, 4)), rng.integers(0, 2, n).astype(float), np.arange(1, n)))
        cfg = ModelConfig((4, 5, 1), epochs=40, learning_rate=0.2, seed=1)
        multi = train_graphs(cfg, [GraphBatch(normalize_adjacency(a), h, y, m) for a, h, y, m in graphs])
        union_a = normalize_adjacency(block_diagonal([g[0] for g in graphs]))
        union_h = np.vstack([g[1] for g in graphs])
        union_y = np.concatenate([g[2] for g in graphs])
        union_m = np.concatenate([graphs[0][3], graphs[1][3] + 5])
        single = train(cfg, union_a, union_h, union_y, union_m)
        np.testing.assert_allclose(multi.loss_trace, single.loss_trace, rtol=1e-12)
        for w1, w2 in zip(multi.model.weights, single.model.weights):
            np.testing.assert_allclose(w1, w2, atol=1e-12)


def test_model_config_invariants():
    with pytest.raises(ConfigError):
        ModelConfig((4,))
    with pytest.raises(ConfigError):
        ModelConfig((4, 2))
    with pytest.raises(ConfigError):
        ModelConfig((4, 1), learning_rate=0)
    assert ModelConfig.build(256).layer_dims == (256, 64, 1)
    assert ModelConfig.build(10, 8, 5).num_layers == 5


def test_init_is_seeded_uniform_with_zero_output():
    cfg = ModelConfig((100, 20, 1), seed=4)
    m = init_model(cfg)
    assert np.abs(m.weights[0]).max() <= 0.1
    assert not m.weights[1].any() and not any(b.any() for b in m.biases)
    np.testing.assert_array_equal(m.weights[0], init_model(cfg).weights[0])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    model = random_model(rng, (3, 4, 1))
    save_checkpoint(model, tmp_path / "c.json")
    again = load_checkpoint(tmp_path / "c.json")
    for a, b in zip(model.weights + model.biases, again.weights + again.biases):
        np.testing.assert_array_equal(a, b)
    write_loss_trace([0.5, 0.25], tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text() == "epoch,loss\n0,0.5\n1,0.25\n"
