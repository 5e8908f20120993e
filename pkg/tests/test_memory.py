import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphmoe.autodiff import ShapeError, Tensor, grad_check
from graphmoe.memory import (
    GateParams, MemoryState, gated_update, hierarchy_rows, memory_attend, reset, residual_update,
    route, step,
)
from oracles import as_arrays, memory_step

D_M, SLOTS, L, D_H = 5, 3, 3, 4


def _gates(seed=0):
    return GateParams.init(np.random.default_rng(seed), D_H, L, SLOTS, D_M)


def _zero(g, *names):
    for n in names:
        t = getattr(g, n)
        t.data = np.zeros_like(t.data)


def test_step_matches_hand_written_update():
    g = _gates(1)
    rng = np.random.default_rng(2)
    M = rng.normal(size=(SLOTS, D_M))
    rows = rng.normal(size=(L, D_M))
    state, R = step(MemoryState(Tensor(M), 4), Tensor(rows), g)
    M_ref, R_ref = memory_step(M, rows, as_arrays(g))
    np.testing.assert_allclose(state.M.data, M_ref, rtol=0, atol=1e-13)
    np.testing.assert_allclose(R.data, R_ref, rtol=0, atol=1e-14)
    assert state.step == 5


def test_attend_zero_inputs_give_zero():
    g = _gates()
    Z, w = memory_attend(Tensor(np.zeros((SLOTS, D_M))), Tensor(np.zeros((L, D_M))), g)
    np.testing.assert_array_equal(Z.data, 0.0)
    np.testing.assert_allclose(w.data, 1.0 / (SLOTS + L), rtol=1e-15)


def test_single_slot_attention_is_convex_combination():
    g = GateParams.init(np.random.default_rng(3), D_H, L, 1, D_M)
    rng = np.random.default_rng(4)
    M, rows = Tensor(rng.normal(size=(1, D_M))), Tensor(rng.normal(size=(L, D_M)))
    Z, w = memory_attend(M, rows, g)
    assert abs(w.data.sum() - 1.0) < 1e-12 and np.all(w.data > 0)
    Y = np.concatenate([M.data, rows.data]) @ g.W_v.data
    np.testing.assert_allclose(Z.data, w.data @ Y, rtol=1e-13)


def test_attend_width_mismatch():
    with pytest.raises(ShapeError):
        memory_attend(Tensor(np.zeros((SLOTS, D_M))), Tensor(np.zeros((L, D_M + 1))), _gates())


def test_residual_update_examples():
    g = _gates()
    _zero(g, "W_m1", "b_m1", "W_m2", "b_m2")
    rng = np.random.default_rng(5)
    Z, M = rng.normal(size=(SLOTS, D_M)), rng.normal(size=(SLOTS, D_M))
    np.testing.assert_array_equal(residual_update(Tensor(Z), Tensor(M), g).data, Z + M)
    np.testing.assert_array_equal(residual_update(Tensor(np.zeros_like(Z)), Tensor(M), g).data, M)
    with pytest.raises(ShapeError):
        residual_update(Tensor(Z), Tensor(np.zeros((SLOTS + 1, D_M))), g)


def test_residual_update_matches_direct_evaluation():
    g = _gates(6)
    rng = np.random.default_rng(7)
    Z, M = rng.normal(size=(SLOTS, D_M)), rng.normal(size=(SLOTS, D_M))
    p = as_arrays(g)
    s = Z + M
    ref = np.maximum(s @ p["W_m1"] + p["b_m1"], 0) @ p["W_m2"] + p["b_m2"] + s
    np.testing.assert_allclose(residual_update(Tensor(Z), Tensor(M), g).data, ref, rtol=0, atol=1e-14)


def test_zero_gates_average_old_and_candidate():
    g = _gates()
    _zero(g, "W_f", "U_f", "W_i", "U_i")
    rng = np.random.default_rng(8)
    M, rows, Mt = (rng.normal(size=s) for s in ((SLOTS, D_M), (L, D_M), (SLOTS, D_M)))
    out = gated_update(Tensor(M), Tensor(rows), Tensor(Mt), g).data
    np.testing.assert_allclose(out, 0.5 * M + 0.5 * np.tanh(Mt), rtol=0, atol=1e-15)


def test_zero_memory_and_candidate_stay_zero():
    g = _gates(9)
    rows = Tensor(np.random.default_rng(10).normal(size=(L, D_M)))
    z = Tensor(np.zeros((SLOTS, D_M)))
    np.testing.assert_array_equal(gated_update(z, rows, z, g).data, 0.0)


def test_route_examples():
    g = _gates()
    _zero(g, "W_R", "b_R")
    R = route(Tensor(np.random.default_rng(0).normal(size=(SLOTS, D_M))), g).data
    np.testing.assert_array_equal(R, np.full(L, 1.0 / L))
    # logits [10, 0, 0] through the bias
    g.b_R.data = np.array([10.0, 0.0, 0.0])
    R = route(Tensor(np.zeros((SLOTS, D_M))), g).data
    np.testing.assert_allclose(R, [0.999909208384341, 4.539580782951091e-05, 4.539580782951091e-05],
                               rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 20))
def test_route_is_probability_vector(seed, scale):
    rng = np.random.default_rng(seed)
    R = route(Tensor(rng.normal(size=(SLOTS, D_M)) * scale), _gates(seed % 7)).data
    assert abs(R.sum() - 1.0) < 1e-12 and np.all(R > 0)


def test_reset():
    a, b = reset(SLOTS, D_M), reset(SLOTS, D_M)
    np.testing.assert_array_equal(a.M.data, b.M.data)
    assert a.step == 0 and np.all(np.isfinite(a.M.data))
    assert np.linalg.norm(a.M.data) <= 0.1 * np.sqrt(SLOTS * D_M)
    g = _gates()
    _zero(g, "W_R", "b_R")
    np.testing.assert_array_equal(route(a.M, g).data, np.full(L, 1.0 / L))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_memory_growth_bounded(seed):
    rng = np.random.default_rng(seed)
    g = _gates(seed % 5)
    state = MemoryState(Tensor(rng.normal(size=(SLOTS, D_M)) * 3), 0)
    for _ in range(20):
        prev = np.abs(state.M.data).max()
        state, R = step(state, Tensor(rng.normal(size=(L, D_M)) * 5), g)
        assert np.abs(state.M.data).max() <= prev + 1.0
        assert np.all(np.isfinite(state.M.data))


def test_hierarchy_rows_pool_entities_and_time():
    g = _gates(11)
    Ht = np.random.default_rng(12).normal(size=(2, L, 4, 6, D_H))
    rows = hierarchy_rows(Tensor(Ht), g).data
    np.testing.assert_allclose(rows, Ht.mean(axis=(2, 3)) @ g.W_in.data, rtol=1e-13)
    assert rows.shape == (2, L, D_M)


@pytest.mark.parametrize("seed", range(10))
def test_grad_check_three_step_unroll(seed):
    rng = np.random.default_rng(seed)
    d_h, d_m, slots, L_ = 2, 2, 2, 2
    g = GateParams.init(rng, d_h, L_, slots, d_m)
    names = [n for n, _ in g.named_parameters()]
    hier = Tensor(rng.normal(size=(3, L_, 2, 2, d_h)))
    M0 = Tensor(rng.normal(size=(slots, d_m)) * 0.5)
    w = Tensor(rng.normal(size=(3, L_)))

    def f(hier, M0, *flat):
        gates = GateParams(**dict(zip(names, flat)))
        rows = hierarchy_rows(hier, gates)
        state = MemoryState(M0, 0)
        total = None
        for t in range(3):
            state, R = step(state, rows[t], gates)
            term = (R * w[t]).sum() + (state.M * state.M).sum() * 0.1
            total = term if total is None else total + term
        return total

    assert grad_check(f, [hier, M0] + g.parameters(), 1e-5) < 1e-4
