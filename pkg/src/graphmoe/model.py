"""The full detector: encoder -> graph -> GNN stack -> experts -> router -> flow."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Tensor, stack
from .encoder import RnnParams, encode_window
from .flow import FlowModel, entity_nll
from .graph import GnnLayerParams, GraphLearnerParams, learn_graph, run_stack
from .memory import GateParams, MemoryState, hierarchy_rows, reset, step
from .moe import ExpertParams, collect_hierarchy, expert_forward, mix
from .params import ParamGroup, sub_seed


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Model and optimisation settings.

    ``moe_enabled`` switches the per-layer expert networks; with it off each
    layer's GNN output is used as-is. ``mar_enabled`` switches the memory
    router; with it off the layer outputs are averaged uniformly, or, when
    the experts are off as well, only the last layer is used.
    """

    T: int = 60
    S: int = 10
    n_experts: int = 3
    lr: float = 0.002
    batch_size: int = 32
    epochs: int = 80
    flow_blocks: int = 1
    seed: int = 0
    moe_enabled: bool = True
    mar_enabled: bool = True
    hidden: int = 32
    cell: str = "gru"
    graph_dim: int = 32
    ffn_dim: int | None = None
    n_slots: int = 4
    mem_dim: int = 32
    flow_hidden: int = 64
    s_max: float = 5.0
    clip_norm: float | None = None
    split: str = "60/40"
    normalize: str = "full"

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.n_experts < 1:
            raise ConfigError("n_experts must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.cell.lower() not in ("gru", "lstm"):
            raise ConfigError(f"cell must be 'gru' or 'lstm', got {self.cell!r}")
        if self.normalize not in ("full", "train"):
            raise ConfigError("normalize must be 'full' or 'train'")
        if self.T < 1 or self.S < 1:
            raise ConfigError("T and S must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GraphMoEParams(ParamGroup):
    encoder: RnnParams
    graph: GraphLearnerParams
    gnn: list[GnnLayerParams]
    flow: FlowModel
    experts: list[ExpertParams] = field(default_factory=list)
    router: GateParams | None = None


@dataclass
class Forward:
    """Everything one forward pass produced, for diagnostics and tests."""

    H: Tensor
    A: Tensor
    layers: list[Tensor]
    attended: list[Tensor]
    expert_out: list[Tensor]
    R: Tensor
    C: Tensor
    memory: MemoryState


class GraphMoE:
    def __init__(self, cfg: TrainConfig, params: GraphMoEParams):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: TrainConfig) -> "GraphMoE":
        rng = lambda name: np.random.default_rng(sub_seed(cfg.seed, name))  # noqa: E731
        d, L = cfg.hidden, cfg.n_experts
        gnn_rng = rng("gnn")
        expert_rng = rng("experts")
        params = GraphMoEParams(
            encoder=RnnParams.init(rng("encoder"), d, cfg.cell),
            graph=GraphLearnerParams.init(rng("graph"), cfg.T, cfg.graph_dim),
            gnn=[GnnLayerParams.init(gnn_rng, d) for _ in range(L)],
            flow=FlowModel.init(rng("flow"), cfg.T, cfg.T * d, cfg.flow_blocks, cfg.flow_hidden, cfg.s_max),
            experts=[ExpertParams.init(expert_rng, d, cfg.ffn_dim) for _ in range(L)] if cfg.moe_enabled else [],
            router=GateParams.init(rng("router"), d, L, cfg.n_slots, cfg.mem_dim) if cfg.mar_enabled else None,
        )
        return cls(cfg, params)

    def reset_memory(self) -> MemoryState:
        return reset(self.cfg.n_slots, self.cfg.mem_dim)

    def forward(self, windows, memory: MemoryState | None = None) -> Forward:
        """Condition C (B, K, T, d) for a time-ordered batch of windows (B, K, T)."""
        p, cfg = self.params, self.cfg
        x = windows if isinstance(windows, Tensor) else Tensor(windows)
        if memory is None:
            memory = self.reset_memory()
        B = x.shape[0]
        L = cfg.n_experts

        H = encode_window(x, p.encoder)
        A = learn_graph(x, p.graph)
        layers = run_stack(A, H, p.gnn)
        if cfg.moe_enabled:
            pairs = [expert_forward(H, Hl, e) for Hl, e in zip(layers, p.experts)]
            attended = [a for a, _ in pairs]
            expert_out = [b for _, b in pairs]
        else:
            attended = expert_out = layers

        if cfg.mar_enabled:
            rows = hierarchy_rows(collect_hierarchy(attended), p.router)
            weights = []
            for b in range(B):
                memory, r = step(memory, rows[b], p.router)
                weights.append(r)
            R = stack(weights, axis=0)
            C = mix(R, expert_out)
        elif cfg.moe_enabled:
            R = Tensor(np.full((B, L), 1.0 / L))
            C = mix(R, expert_out)
        else:
            R = Tensor(np.tile(np.eye(L)[-1], (B, 1)))
            C = expert_out[-1]
        return Forward(H, A, layers, attended, expert_out, R, C, memory)

    def entity_nll(self, windows, memory: MemoryState | None = None):
        """Per (window, entity) NLL and the advanced memory."""
        out = self.forward(windows, memory)
        return entity_nll(windows, out.C, self.params.flow), out

    def loss(self, windows, memory: MemoryState | None = None):
        nll, out = self.entity_nll(windows, memory)
        return nll.mean(), out.memory

    def score(self, windows: np.ndarray, memory: MemoryState | None = None, chunk: int = 64):
        """Window scores and router weights, consuming windows in order.

        Returns ``(scores (N,), R (N, L), final memory)``.
        """
        if memory is None:
            memory = self.reset_memory()
        scores, Rs = [], []
        for i in range(0, windows.shape[0], chunk):
            nll, out = self.entity_nll(windows[i : i + chunk], memory)
            memory = MemoryState(out.memory.M.detach(), out.memory.step)
            scores.append(nll.data.mean(axis=1))
            Rs.append(out.R.data)
        if not scores:
            return np.zeros(0), np.zeros((0, self.cfg.n_experts)), memory
        return np.concatenate(scores), np.concatenate(Rs), memory

    def named_parameters(self):
        return self.params.named_parameters()

    def parameters(self) -> list[Tensor]:
        return self.params.parameters()
