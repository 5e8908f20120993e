"""Per-window attention graph and the stacked spatio-temporal GNN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, concat, affine
from .params import ParamGroup, linear, uniform


@dataclass
class GraphLearnerParams(ParamGroup):
    W_q: Tensor  # (T, d_a)
    b_q: Tensor
    W_k: Tensor
    b_k: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, T: int, d_a: int = 32) -> "GraphLearnerParams":
        W_q, b_q = linear(rng, T, d_a)
        W_k, b_k = linear(rng, T, d_a)
        return cls(W_q, b_q, W_k, b_k)


@dataclass
class GnnLayerParams(ParamGroup):
    W1: Tensor  # graph convolution
    W2: Tensor  # own history
    W3: Tensor  # output

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "GnnLayerParams":
        return cls(*(uniform(rng, d, (d, d)) for _ in range(3)))


def learn_graph(window, params: GraphLearnerParams) -> Tensor:
    """Row-stochastic adjacency from raw window values, (..., K, T) -> (..., K, K).

    Logits are plain dot products of two linear projections (no temperature).
    """
    x = window if isinstance(window, Tensor) else Tensor(window)
    if x.shape[-1] != params.W_q.shape[0]:
        raise ShapeError(f"learn_graph: window length {x.shape[-1]} != projection input {params.W_q.shape[0]}")
    q = affine(x, params.W_q, params.b_q)
    k = affine(x, params.W_k, params.b_k)
    return (q @ k.swapaxes(-1, -2)).softmax()


def gnn_layer(A: Tensor, H_prev: Tensor, layer: GnnLayerParams) -> Tensor:
    """H_t = ReLU(A H_prev_t W1 + H_prev_{t-1} W2) W3 for every t at once.

    ``H_prev`` is (..., K, T, d); the history term at t = 0 is zero.
    """
    *lead, K, T, d = H_prev.shape
    if A.shape[-2:] != (K, K) or tuple(A.shape[:-2]) != tuple(lead):
        raise ShapeError(f"gnn_layer: adjacency {A.shape} incompatible with features {H_prev.shape}")
    if layer.W1.shape[0] != d:
        raise ShapeError(f"gnn_layer: feature width {d} != weight input {layer.W1.shape[0]}")
    mixed = (A @ H_prev.reshape(*lead, K, T * d)).reshape(*lead, K, T, d)
    shifted = concat([Tensor(np.zeros((*lead, K, 1, d))), H_prev[..., :-1, :]], axis=-2)
    return (mixed @ layer.W1 + shifted @ layer.W2).relu() @ layer.W3


def run_stack(A: Tensor, H0: Tensor, layers: list[GnnLayerParams]) -> list[Tensor]:
    """Apply every layer in turn and keep all intermediate outputs H^1..H^L."""
    if not layers:
        raise ValueError("run_stack needs at least one layer")
    out = []
    H = H0
    for layer in layers:
        H = gnn_layer(A, H, layer)
        out.append(H)
    return out
