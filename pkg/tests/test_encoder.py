import numpy as np
import pytest

from graphmoe.autodiff import Tensor, grad_check
from graphmoe.encoder import RnnParams, encode_window, initial_state, rnn_cell_step
from oracles import gru_loop, lstm_loop

CELLS = ("gru", "lstm")


@pytest.mark.parametrize("cell", CELLS)
def test_zero_params_keep_zero_state(cell):
    p = RnnParams.zeros(4, cell)
    state = initial_state(p, 3)
    for x in (1.0, -2.0, 5.0):
        state = rnn_cell_step(np.full(3, x), state, p)
    for part in (state,) if cell == "gru" else state:
        np.testing.assert_array_equal(part.data, np.zeros((3, 4)))


@pytest.mark.parametrize("cell", CELLS)
def test_encode_matches_textbook_loop(cell):
    rng = np.random.default_rng(0)
    p = RnnParams.init(rng, 6, cell)
    x = rng.normal(size=(2, 4, 9))
    H = encode_window(x, p).data
    loop = (gru_loop if cell == "gru" else lstm_loop)(
        x.reshape(8, 9), p.W_x.data, p.W_h.data, p.b_x.data, p.b_h.data
    )
    np.testing.assert_allclose(H.reshape(8, 9, 6), loop, rtol=0, atol=1e-12)


@pytest.mark.parametrize("cell", CELLS)
def test_unrolled_equals_step_loop(cell):
    rng = np.random.default_rng(1)
    p = RnnParams.init(rng, 5, cell)
    x = rng.normal(size=(3, 12))
    H = encode_window(x, p).data
    state = initial_state(p, 3)
    for t in range(12):
        state = rnn_cell_step(x[:, t], state, p)
        h = state if cell == "gru" else state[0]
        np.testing.assert_allclose(H[:, t], h.data, rtol=0, atol=1e-13)


def test_single_step_window():
    rng = np.random.default_rng(2)
    p = RnnParams.init(rng, 4)
    x = rng.normal(size=(3, 1))
    H = encode_window(x, p).data
    one = rnn_cell_step(x[:, 0], initial_state(p, 3), p).data
    np.testing.assert_allclose(H[:, 0], one, rtol=0, atol=1e-14)
    assert H.shape == (3, 1, 4)


def test_duplicate_rows_and_permutation_equivariance():
    rng = np.random.default_rng(3)
    p = RnnParams.init(rng, 4)
    x = rng.normal(size=(4, 10))
    x[2] = x[0]
    H = encode_window(x, p).data
    np.testing.assert_array_equal(H[0], H[2])
    perm = np.array([3, 1, 0, 2])
    np.testing.assert_allclose(encode_window(x[perm], p).data, H[perm], rtol=0, atol=1e-14)


def test_reversal_changes_final_state():
    rng = np.random.default_rng(4)
    p = RnnParams.init(rng, 4)
    x = rng.normal(size=(2, 10))
    assert not np.allclose(encode_window(x, p).data[:, -1], encode_window(x[:, ::-1].copy(), p).data[:, -1])


def test_shape_and_finite():
    p = RnnParams.init(np.random.default_rng(5), 32)
    H = encode_window(np.random.default_rng(6).normal(size=(5, 60)), p)
    assert H.shape == (5, 60, 32)
    assert np.all(np.isfinite(H.data))


def test_unknown_cell_rejected():
    with pytest.raises(ValueError):
        RnnParams.init(np.random.default_rng(0), 4, "rnn")


@pytest.mark.parametrize("cell", CELLS)
@pytest.mark.parametrize("seed", range(10))
def test_grad_check_three_step_unroll(cell, seed):
    rng = np.random.default_rng(seed)
    p = RnnParams.init(rng, 3, cell)
    x = Tensor(rng.normal(size=(2, 3)))
    w = Tensor(rng.normal(size=(2, 3, 3)))

    def f(x, W_x, W_h, b_x, b_h):
        q = RnnParams(W_x, W_h, b_x, b_h, cell)
        return (encode_window(x, q) * w).sum()

    assert grad_check(f, [x, p.W_x, p.W_h, p.b_x, p.b_h], 1e-5) < 1e-4

    def g(x, W_x, W_h, b_x, b_h):  # composed reference path
        q = RnnParams(W_x, W_h, b_x, b_h, cell)
        state = initial_state(q, 2)
        total = None
        for t in range(3):
            state = rnn_cell_step(x[:, t], state, q)
            h = state if cell == "gru" else state[0]
            term = (h * w[:, t]).sum()
            total = term if total is None else total + term
        return total

    assert grad_check(g, [x, p.W_x, p.W_h, p.b_x, p.b_h], 1e-5) < 1e-4
