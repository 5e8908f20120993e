"""Memory-augmented router.

A slot memory M (n_slots x d_m) is updated once per window from the pooled
hierarchy of attended expert features, then read out through a linear map
and softmax into expert weights R.

Per step::

    rows  = pool(H~_t) @ W_in                       (L x d_m)
    Z     = Attn(Q=M, K/V=[M; rows])
    M~    = phi_M(Z + M) + Z + M
    G_f   = vec(rows) W_f + tanh(M) U_f            (gate input broadcast over slots)
    G_i   = vec(rows) W_i + tanh(M) U_i
    M_t   = sigmoid(G_f) * M + sigmoid(G_i) * tanh(M~)
    R     = softmax(vec(M_t) W_R + b_R)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, concat, affine
from .params import ParamGroup, linear, uniform

INIT_SEED = 0
INIT_SCALE = 0.01


@dataclass
class MemoryState:
    M: Tensor
    step: int = 0


@dataclass
class GateParams(ParamGroup):
    W_in: Tensor  # (d_h, d_m) hierarchy rows projection
    W_q: Tensor  # (d_m, d_m)
    W_k: Tensor
    W_v: Tensor
    W_m1: Tensor  # phi_M
    b_m1: Tensor
    W_m2: Tensor
    b_m2: Tensor
    W_f: Tensor  # (L*d_m, d_m)
    U_f: Tensor  # (d_m, d_m)
    W_i: Tensor
    U_i: Tensor
    W_R: Tensor  # (n_slots*d_m, L)
    b_R: Tensor

    @property
    def n_experts(self) -> int:
        return self.W_R.shape[1]

    @property
    def d_m(self) -> int:
        return self.W_q.shape[0]

    @property
    def n_slots(self) -> int:
        return self.W_R.shape[0] // self.d_m

    @classmethod
    def init(cls, rng: np.random.Generator, d_h: int, n_experts: int,
             n_slots: int = 4, d_m: int = 32) -> "GateParams":
        W_m1, b_m1 = linear(rng, d_m, d_m)
        W_m2, b_m2 = linear(rng, d_m, d_m)
        W_R, b_R = linear(rng, n_slots * d_m, n_experts)
        return cls(
            W_in=uniform(rng, d_h, (d_h, d_m)),
            W_q=uniform(rng, d_m, (d_m, d_m)),
            W_k=uniform(rng, d_m, (d_m, d_m)),
            W_v=uniform(rng, d_m, (d_m, d_m)),
            W_m1=W_m1, b_m1=b_m1, W_m2=W_m2, b_m2=b_m2,
            W_f=uniform(rng, n_experts * d_m, (n_experts * d_m, d_m)),
            U_f=uniform(rng, d_m, (d_m, d_m)),
            W_i=uniform(rng, n_experts * d_m, (n_experts * d_m, d_m)),
            U_i=uniform(rng, d_m, (d_m, d_m)),
            W_R=W_R, b_R=b_R,
        )


def reset(n_slots: int = 4, d_m: int = 32) -> MemoryState:
    """Fixed small initial memory drawn from seed 0 (identical on every call)."""
    M0 = np.random.default_rng(INIT_SEED).standard_normal((n_slots, d_m)) * INIT_SCALE
    return MemoryState(Tensor(M0), 0)


def hierarchy_rows(hierarchy: Tensor, gates: GateParams) -> Tensor:
    """Mean-pool (..., L, K, T, d_h) over entities and time, project to (..., L, d_m)."""
    return hierarchy.mean(axis=(-3, -2)) @ gates.W_in


def memory_attend(M_prev: Tensor, rows: Tensor, gates: GateParams) -> tuple[Tensor, Tensor]:
    """Attention with the memory as queries over [memory; hierarchy rows].

    Returns Z (n_slots x d_m) and the attention weights (n_slots x (n_slots+L)).
    """
    if rows.shape[-1] != M_prev.shape[-1]:
        raise ShapeError(f"memory_attend: rows width {rows.shape[-1]} != memory width {M_prev.shape[-1]}")
    Y = concat([M_prev, rows], axis=0)
    q = M_prev @ gates.W_q
    k = Y @ gates.W_k
    v = Y @ gates.W_v
    weights = ((q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(gates.d_m))).softmax()
    return weights @ v, weights


def residual_update(Z: Tensor, M_prev: Tensor, gates: GateParams) -> Tensor:
    if Z.shape != M_prev.shape:
        raise ShapeError(f"residual_update: Z {Z.shape} vs memory {M_prev.shape}")
    s = Z + M_prev
    return affine(affine(s, gates.W_m1, gates.b_m1).relu(), gates.W_m2, gates.b_m2) + s


def gated_update(M_prev: Tensor, rows: Tensor, M_tilde: Tensor, gates: GateParams) -> Tensor:
    flat = rows.reshape(1, -1)
    tm = M_prev.tanh()
    g_f = flat @ gates.W_f + tm @ gates.U_f
    g_i = flat @ gates.W_i + tm @ gates.U_i
    return g_f.sigmoid() * M_prev + g_i.sigmoid() * M_tilde.tanh()


def route(M: Tensor, gates: GateParams) -> Tensor:
    """Expert weights R = softmax(vec(M) W_R + b_R), shape (L,)."""
    return affine(M.reshape(1, -1), gates.W_R, gates.b_R).softmax().reshape(-1)


def step(state: MemoryState, rows: Tensor, gates: GateParams) -> tuple[MemoryState, Tensor]:
    """Advance the memory by one window and emit that window's router weights."""
    M_prev = state.M
    Z, _ = memory_attend(M_prev, rows, gates)
    M_tilde = residual_update(Z, M_prev, gates)
    M = gated_update(M_prev, rows, M_tilde, gates)
    return MemoryState(M, state.step + 1), route(M, gates)
