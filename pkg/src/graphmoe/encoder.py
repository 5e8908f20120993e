"""Entity-wise recurrent encoder.

One GRU (or LSTM) with scalar input is shared by every entity; the hidden
state after each in-window step forms the temporal embedding H of shape
(K, T, d_h), or (B, K, T, d_h) for a batch of windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NumericError, Tensor, apply, affine, stack
from .params import ParamGroup, uniform

GATES = {"gru": 3, "lstm": 4}


@dataclass
class RnnParams(ParamGroup):
    W_x: Tensor  # (1, G*d)
    W_h: Tensor  # (d, G*d)
    b_x: Tensor  # (G*d,)
    b_h: Tensor  # (G*d,)
    cell_kind: str = "gru"

    @property
    def hidden(self) -> int:
        return self.W_h.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 32, cell_kind: str = "gru") -> "RnnParams":
        cell_kind = cell_kind.lower()
        if cell_kind not in GATES:
            raise ValueError(f"cell_kind must be 'gru' or 'lstm', got {cell_kind!r}")
        g = GATES[cell_kind] * hidden
        # torch-style init: every recurrent weight uses fan_in = hidden
        return cls(
            W_x=uniform(rng, hidden, (1, g)),
            W_h=uniform(rng, hidden, (hidden, g)),
            b_x=uniform(rng, hidden, (g,)),
            b_h=uniform(rng, hidden, (g,)),
            cell_kind=cell_kind,
        )

    @classmethod
    def zeros(cls, hidden: int, cell_kind: str = "gru") -> "RnnParams":
        g = GATES[cell_kind] * hidden
        z = lambda *s: Tensor(np.zeros(s), requires_grad=True)  # noqa: E731
        return cls(z(1, g), z(hidden, g), z(g), z(g), cell_kind)


def initial_state(params: RnnParams, n: int):
    h = Tensor(np.zeros((n, params.hidden)))
    if params.cell_kind == "lstm":
        return h, Tensor(np.zeros((n, params.hidden)))
    return h


def _step_from_projection(gx: Tensor, state, params: RnnParams):
    d = params.hidden
    if params.cell_kind == "gru":
        h = state
        gh = h @ params.W_h + params.b_h
        rz = (gx[:, : 2 * d] + gh[:, : 2 * d]).sigmoid()
        r, z = rz[:, :d], rz[:, d:]
        n = (gx[:, 2 * d :] + r * gh[:, 2 * d :]).tanh()
        return n + z * (h - n)
    h, c = state
    gates = gx + h @ params.W_h + params.b_h
    i_f = gates[:, : 2 * d].sigmoid()
    g = gates[:, 2 * d : 3 * d].tanh()
    o = gates[:, 3 * d :].sigmoid()
    c_next = i_f[:, d:] * c + i_f[:, :d] * g
    return o * c_next.tanh(), c_next


def rnn_cell_step(x_t, state, params: RnnParams):
    """One GRU/LSTM update for a column of scalar inputs ``x_t`` (N,) or (N, 1).

    GRU state is ``h``; LSTM state is ``(h, c)``.
    """
    x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
    if x_t.ndim == 1:
        x_t = x_t.reshape(-1, 1)
    gx = x_t @ params.W_x + params.b_x
    nxt = _step_from_projection(gx, state, params)
    h = nxt if params.cell_kind == "gru" else nxt[0]
    if not np.all(np.isfinite(h.data)):
        raise NumericError("rnn_cell_step: non-finite hidden state")
    return nxt


def encode_window(window, params: RnnParams) -> Tensor:
    """Run the shared RNN over each entity row from a zero state.

    ``window`` is (K, T) or (B, K, T); the result is (..., K, T, d_h) with
    ``H[k, t]`` the state after consuming ``window[k, :t+1]``. Uses the fused
    cell ops; :func:`rnn_cell_step` is the composed reference.
    """
    x = window if isinstance(window, Tensor) else Tensor(window)
    lead = x.shape[:-1]
    T = x.shape[-1]
    n = int(np.prod(lead))
    d = params.hidden
    # input projections for every step at once, time-major (T, n, G*d)
    gx_all = affine(x.reshape(n, T).transpose().reshape(T, n, 1), params.W_x, params.b_x)
    hs = []
    if params.cell_kind == "gru":
        h = initial_state(params, n)
        for t in range(T):
            h = apply("gru_cell", [gx_all, h, params.W_h, params.b_h], {"t": t})
            hs.append(h)
    else:
        h, c = initial_state(params, n)
        for t in range(T):
            hc = apply("lstm_cell", [gx_all, h, c, params.W_h, params.b_h], {"t": t})
            h, c = hc[:, :d], hc[:, d:]
            hs.append(h)
    H = stack(hs, axis=1)
    if not np.all(np.isfinite(H.data)):
        raise NumericError("encode_window: non-finite hidden state")
    return H.reshape(*lead, T, d)
