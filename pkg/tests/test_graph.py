import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphmoe.autodiff import ShapeError, Tensor, grad_check
from graphmoe.graph import GnnLayerParams, GraphLearnerParams, gnn_layer, learn_graph, run_stack
from oracles import gnn_loop


def test_single_entity_graph():
    p = GraphLearnerParams.init(np.random.default_rng(0), 8, 4)
    A = learn_graph(np.random.default_rng(1).normal(size=(1, 8)), p).data
    np.testing.assert_array_equal(A, [[1.0]])


def test_identical_rows_give_identical_adjacency_rows():
    p = GraphLearnerParams.init(np.random.default_rng(0), 8, 4)
    x = np.tile(np.random.default_rng(1).normal(size=8), (4, 1))
    A = learn_graph(x, p).data
    for i in range(1, 4):
        np.testing.assert_array_equal(A[i], A[0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_adjacency_row_stochastic_and_positive(seed, K):
    rng = np.random.default_rng(seed)
    p = GraphLearnerParams.init(rng, 12, 6)
    A = learn_graph(rng.normal(size=(K, 12)), p).data
    assert np.all(np.abs(A.sum(axis=1) - 1.0) < 1e-9)
    assert np.all(A > 0) and np.all(A <= 1)


def test_learn_graph_uses_unscaled_dot_products():
    rng = np.random.default_rng(2)
    p = GraphLearnerParams.init(rng, 6, 3)
    x = rng.normal(size=(4, 6))
    q = x @ p.W_q.data + p.b_q.data
    k = x @ p.W_k.data + p.b_k.data
    e = q @ k.T
    ref = np.exp(e - e.max(1, keepdims=True))
    ref /= ref.sum(1, keepdims=True)
    np.testing.assert_allclose(learn_graph(x, p).data, ref, rtol=1e-13)


def test_learn_graph_width_mismatch():
    p = GraphLearnerParams.init(np.random.default_rng(0), 8, 4)
    with pytest.raises(ShapeError):
        learn_graph(np.zeros((3, 7)), p)


def _layer(rng, d):
    return GnnLayerParams.init(rng, d)


def test_zero_weights_give_zero_output():
    d = 3
    z = lambda: Tensor(np.zeros((d, d)))  # noqa: E731
    out = gnn_layer(Tensor(np.full((2, 2), 0.5)), Tensor(np.random.default_rng(0).normal(size=(2, 4, d))),
                    GnnLayerParams(z(), z(), z()))
    np.testing.assert_array_equal(out.data, 0.0)


def test_decoupled_case():
    rng = np.random.default_rng(1)
    d = 4
    W1 = rng.normal(size=(d, d))
    H = rng.normal(size=(3, 5, d))
    layer = GnnLayerParams(Tensor(W1), Tensor(np.zeros((d, d))), Tensor(np.eye(d)))
    out = gnn_layer(Tensor(np.eye(3)), Tensor(H), layer).data
    np.testing.assert_allclose(out, np.maximum(H @ W1, 0.0), rtol=0, atol=1e-14)


def test_batched_equals_per_t_loop():
    rng = np.random.default_rng(2)
    K, T, d = 4, 7, 5
    gp = GraphLearnerParams.init(rng, T, 3)
    layer = _layer(rng, d)
    x = rng.normal(size=(2, K, T))
    H = rng.normal(size=(2, K, T, d))
    A = learn_graph(x, gp)
    out = gnn_layer(A, Tensor(H), layer).data
    for b in range(2):
        ref = gnn_loop(A.data[b], H[b], layer.W1.data, layer.W2.data, layer.W3.data)
        np.testing.assert_allclose(out[b], ref, rtol=0, atol=1e-13)


def test_stack_keeps_every_layer():
    rng = np.random.default_rng(3)
    K, T, d = 3, 6, 4
    A = learn_graph(rng.normal(size=(K, T)), GraphLearnerParams.init(rng, T, 3))
    H0 = Tensor(rng.normal(size=(K, T, d)))
    layers = [_layer(rng, d) for _ in range(3)]
    out = run_stack(A, H0, layers)
    assert len(out) == 3 and all(h.shape == (K, T, d) for h in out)
    np.testing.assert_array_equal(out[0].data, gnn_layer(A, H0, layers[0]).data)
    np.testing.assert_array_equal(out[2].data, gnn_layer(A, out[1], layers[2]).data)
    one = run_stack(A, H0, layers[:1])
    assert len(one) == 1
    with pytest.raises(ValueError):
        run_stack(A, H0, [])


def test_every_node_sees_every_entity():
    rng = np.random.default_rng(4)
    K, T, d = 4, 5, 3
    A = learn_graph(rng.normal(size=(K, T)), GraphLearnerParams.init(rng, T, 3))
    layers = [_layer(rng, d) for _ in range(2)]
    H = rng.normal(size=(K, T, d)) + 1.0
    base = run_stack(A, Tensor(H), layers)
    H2 = H.copy()
    H2[2] += 0.5
    moved = run_stack(A, Tensor(H2), layers)
    for i in range(K):
        assert not np.allclose(base[0].data[i], moved[0].data[i])


def test_permutation_equivariance():
    rng = np.random.default_rng(5)
    K, T, d = 5, 6, 4
    gp = GraphLearnerParams.init(rng, T, 3)
    layers = [_layer(rng, d) for _ in range(3)]
    x = rng.normal(size=(K, T))
    H = rng.normal(size=(K, T, d))
    perm = rng.permutation(K)
    A = learn_graph(x, gp)
    Ap = learn_graph(x[perm], gp)
    np.testing.assert_allclose(Ap.data, A.data[np.ix_(perm, perm)], rtol=0, atol=1e-14)
    for h, hp in zip(run_stack(A, Tensor(H), layers), run_stack(Ap, Tensor(H[perm]), layers)):
        np.testing.assert_allclose(hp.data, h.data[perm], rtol=0, atol=1e-13)


def test_shape_errors():
    rng = np.random.default_rng(6)
    with pytest.raises(ShapeError):
        gnn_layer(Tensor(np.eye(3)), Tensor(np.zeros((4, 5, 2))), _layer(rng, 2))
    with pytest.raises(ShapeError):
        gnn_layer(Tensor(np.eye(3)), Tensor(np.zeros((3, 5, 2))), _layer(rng, 4))


@pytest.mark.parametrize("seed", range(10))
def test_grad_check_graph_and_layer(seed):
    rng = np.random.default_rng(seed)
    K, T, d = 3, 4, 2
    gp = GraphLearnerParams.init(rng, T, 2)
    layer = _layer(rng, d)
    x = Tensor(rng.normal(size=(K, T)))
    H = Tensor(rng.normal(size=(K, T, d)))
    w = Tensor(rng.normal(size=(K, T, d)))

    def f(x, H, W_q, b_q, W_k, b_k, W1, W2, W3):
        A = learn_graph(x, GraphLearnerParams(W_q, b_q, W_k, b_k))
        return (gnn_layer(A, H, GnnLayerParams(W1, W2, W3)) * w).sum()

    args = [x, H, gp.W_q, gp.b_q, gp.W_k, gp.b_k, layer.W1, layer.W2, layer.W3]
    assert grad_check(f, args, 1e-5) < 1e-4
