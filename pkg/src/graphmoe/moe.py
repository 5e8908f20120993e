"""Per-layer experts and the router-weighted mixture.

Expert ``l`` attends from the RNN embedding H (queries) to the layer-l GNN
output (keys/values) across entities, independently at each time step, then
applies layer norm and a two-layer ReLU FFN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, layer_norm, affine, stack
from .params import ParamGroup, linear, uniform


@dataclass
class ExpertParams(ParamGroup):
    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    W_o: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor
    W_f1: Tensor
    b_f1: Tensor
    W_f2: Tensor
    b_f2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, d_ff: int | None = None) -> "ExpertParams":
        d_ff = 4 * d if d_ff is None else d_ff
        W_q, W_k, W_v, W_o = (uniform(rng, d, (d, d)) for _ in range(4))
        W_f1, b_f1 = linear(rng, d, d_ff)
        W_f2, b_f2 = linear(rng, d_ff, d)
        return cls(
            W_q, W_k, W_v, W_o,
            Tensor(np.ones(d), requires_grad=True),
            Tensor(np.zeros(d), requires_grad=True),
            W_f1, b_f1, W_f2, b_f2,
        )


def entity_attention(H: Tensor, H_l: Tensor, p: ExpertParams) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over entities per time step.

    Returns the projected output (..., K, T, d) and the weights (..., T, K, K).
    """
    d = H.shape[-1]
    Ht = H.swapaxes(-3, -2)
    Hl = H_l.swapaxes(-3, -2)
    q = Ht @ p.W_q
    k = Hl @ p.W_k
    v = Hl @ p.W_v
    weights = ((q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d))).softmax()
    out = (weights @ v) @ p.W_o
    return out.swapaxes(-3, -2), weights


def expert_forward(H: Tensor, H_l: Tensor, p: ExpertParams, ln_eps: float = 1e-5) -> tuple[Tensor, Tensor]:
    """Return (attended features, expert-aligned features) for one GNN layer."""
    if H.shape != H_l.shape:
        raise ShapeError(f"expert_forward: query {H.shape} and key/value {H_l.shape} differ")
    attended, _ = entity_attention(H, H_l, p)
    tilde = layer_norm(attended, ln_eps) * p.ln_gamma + p.ln_beta
    bar = affine(affine(tilde, p.W_f1, p.b_f1).relu(), p.W_f2, p.b_f2)
    return tilde, bar


def collect_hierarchy(attended: list[Tensor], axis: int = -4) -> Tensor:
    """Stack per-layer attended features on a new hierarchy axis, layer order kept.

    With the default axis, (K, T, d) inputs give (L, K, T, d) and batched
    (B, K, T, d) inputs give (B, L, K, T, d).
    """
    if not attended:
        raise ValueError("collect_hierarchy needs at least one layer")
    if len({t.shape for t in attended}) != 1:
        raise ShapeError(f"collect_hierarchy: inconsistent shapes {[t.shape for t in attended]}")
    return stack(attended, axis=axis)


def mix(R: Tensor, experts: list[Tensor]) -> Tensor:
    """Condition C = sum_l R_l * expert_l.

    ``R`` is (L,) for a single window or (B, L) with one weight vector per
    window of a batch.
    """
    L = R.shape[-1]
    if L != len(experts):
        raise ShapeError(f"mix: {L} router weights for {len(experts)} experts")
    extra = experts[0].ndim - R.ndim + 1
    C = None
    for l, Hb in enumerate(experts):
        w = R[..., l]
        if w.ndim:
            w = w.reshape(*w.shape, *([1] * extra))
        term = w * Hb
        C = term if C is None else C + term
    return C
