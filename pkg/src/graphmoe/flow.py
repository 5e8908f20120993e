"""Conditional affine-coupling normalizing flow.

Each entity's window row x in R^D is mapped to z = f(x | c) where c is that
entity's condition row. A block is two coupling layers with complementary
even/odd masks, so every coordinate is transformed once per block. Log
scales are squashed as ``s_max * tanh(raw / s_max)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError, Tensor, concat, affine
from .params import ParamGroup, linear

LOG_2PI = float(np.log(2.0 * np.pi))


def _mask(D: int, parity: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(D)
    return idx[idx % 2 == parity], idx[idx % 2 != parity]  # active, passive


@dataclass
class CouplingParams(ParamGroup):
    W1: Tensor  # (n_passive + d_c, hidden)
    b1: Tensor
    W2: Tensor  # (hidden, 2 * n_active): log-scale then shift
    b2: Tensor
    D: int = 0
    parity: int = 0
    s_max: float = 5.0

    @classmethod
    def init(cls, rng: np.random.Generator, D: int, d_c: int, parity: int,
             hidden: int = 64, s_max: float = 5.0) -> "CouplingParams":
        active, passive = _mask(D, parity)
        W1, b1 = linear(rng, passive.size + d_c, hidden)
        W2, b2 = linear(rng, hidden, 2 * active.size)
        return cls(W1, b1, W2, b2, D, parity, s_max)

    def _split(self):
        active, passive = _mask(self.D, self.parity)
        inv = np.argsort(np.concatenate([passive, active]))
        return active, passive, inv

    def scale_shift(self, x_passive: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        n_a = self.W2.shape[1] // 2
        h = affine(concat([x_passive, c], axis=-1), self.W1, self.b1).tanh()
        out = affine(h, self.W2, self.b2)
        s = (out[..., :n_a] * (1.0 / self.s_max)).tanh() * self.s_max
        return s, out[..., n_a:]

    def forward(self, x: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        active, passive, inv = self._split()
        xp, xa = x.take(passive), x.take(active)
        s, t = self.scale_shift(xp, c)
        ya = xa * s.exp() + t
        return concat([xp, ya], axis=-1).take(inv), s.sum(axis=-1)

    def inverse(self, y: Tensor, c: Tensor) -> Tensor:
        active, passive, inv = self._split()
        yp, ya = y.take(passive), y.take(active)
        s, t = self.scale_shift(yp, c)
        xa = (ya - t) * (-s).exp()
        return concat([yp, xa], axis=-1).take(inv)


@dataclass
class FlowModel(ParamGroup):
    couplings: list[CouplingParams] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.couplings[0].D

    @classmethod
    def init(cls, rng: np.random.Generator, D: int, d_c: int, blocks: int = 1,
             hidden: int = 64, s_max: float = 5.0) -> "FlowModel":
        if blocks < 1:
            raise ValueError("a flow needs at least one block")
        layers = [
            CouplingParams.init(rng, D, d_c, parity, hidden, s_max)
            for _ in range(blocks)
            for parity in (0, 1)
        ]
        return cls(layers)


def flow_forward(x, C, flow: FlowModel, per_layer: bool = False):
    """z = f(x | C) and log|det dz/dx| summed over coupling layers.

    ``x`` is (N, D), ``C`` is (N, d_c). With ``per_layer`` the individual
    log-det terms are returned as a third item.
    """
    z = x if isinstance(x, Tensor) else Tensor(x)
    c = C if isinstance(C, Tensor) else Tensor(C)
    terms = []
    for layer in flow.couplings:
        z, ld = layer.forward(z, c)
        terms.append(ld)
    log_det = terms[0]
    for ld in terms[1:]:
        log_det = log_det + ld
    if per_layer:
        return z, log_det, terms
    return z, log_det


def flow_inverse(z, C, flow: FlowModel) -> np.ndarray:
    x = z if isinstance(z, Tensor) else Tensor(z)
    c = C if isinstance(C, Tensor) else Tensor(C)
    for layer in reversed(flow.couplings):
        x = layer.inverse(x, c)
    return x.data


def row_nll(x, C, flow: FlowModel) -> Tensor:
    """Negative log-likelihood of each row under the flow and a standard normal base."""
    z, log_det = flow_forward(x, C, flow)
    D = z.shape[-1]
    return (z * z).sum(axis=-1) * 0.5 + (0.5 * D * LOG_2PI) - log_det


def _flatten(windows, conditions):
    x = windows if isinstance(windows, Tensor) else Tensor(windows)
    c = conditions if isinstance(conditions, Tensor) else Tensor(conditions)
    B, K, D = x.shape
    return x.reshape(B * K, D), c.reshape(B * K, -1), B, K


def _locate_failure(windows, conditions, flow: FlowModel) -> str:
    x = np.asarray(windows.data if isinstance(windows, Tensor) else windows)
    c = np.asarray(conditions.data if isinstance(conditions, Tensor) else conditions)
    B, K = x.shape[:2]
    c = c.reshape(B, K, -1)
    for b in range(B):
        for k in range(K):
            try:
                row_nll(x[b, k][None], c[b, k][None], flow)
            except NumericError:
                return f"window {b}, entity {k}"
    return "location unknown"


def entity_nll(windows, conditions, flow: FlowModel) -> Tensor:
    """Per (window, entity) NLL; ``windows`` (B, K, D), ``conditions`` (B, K, ...)."""
    x, c, B, K = _flatten(windows, conditions)
    try:
        return row_nll(x, c, flow).reshape(B, K)
    except NumericError as err:
        raise NumericError(f"{err} at {_locate_failure(windows, conditions, flow)}") from err


def nll_loss(windows, conditions, flow: FlowModel) -> Tensor:
    """Mean NLL over all windows and entities (the training objective)."""
    return entity_nll(windows, conditions, flow).mean()


def anomaly_score(windows, conditions, flow: FlowModel) -> np.ndarray:
    """Per-window score: mean NLL over entities; higher means more anomalous."""
    return entity_nll(windows, conditions, flow).data.mean(axis=1)
