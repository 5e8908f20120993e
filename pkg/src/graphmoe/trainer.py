"""Maximum-likelihood training with Adam, checkpoints and ablation sweeps."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import NumericError, Tape, Tensor, backward
from .data import RawSeries, WindowBatch, slide_windows, split_dataset, zscore_normalize
from .memory import MemoryState
from .metrics import auroc
from .model import GraphMoE, TrainConfig

log = logging.getLogger(__name__)

MAGIC = b"GMOECKPT"
VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: "Checkpoint | None", trace: list):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.trace = trace


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Named float64 arrays plus the config they belong to.

    On disk (all little-endian)::

        magic  8 bytes  b"GMOECKPT"
        u32    version
        u32    number of array records
        u32    config length in bytes, then UTF-8 JSON config
        per record: u32 name length, name (UTF-8), u32 rank,
                    rank x u64 dims, prod(dims) x f64 payload (C order)
    """

    config: TrainConfig
    arrays: dict[str, np.ndarray]
    n_entities: int

    MEMORY_KEY = "memory.M"
    STEP_KEY = "memory.step"

    @classmethod
    def from_model(cls, model: GraphMoE, memory: MemoryState, n_entities: int) -> "Checkpoint":
        arrays = {name: t.data.copy() for name, t in model.named_parameters()}
        arrays[cls.MEMORY_KEY] = memory.M.data.copy()
        arrays[cls.STEP_KEY] = np.array([float(memory.step)])
        return cls(model.cfg, arrays, n_entities)

    def model(self) -> GraphMoE:
        model = GraphMoE.init(self.config)
        params = dict(model.named_parameters())
        missing = set(params) - set(self.arrays)
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters {sorted(missing)}")
        for name, t in params.items():
            arr = self.arrays[name]
            if arr.shape != t.shape:
                raise CheckpointError(f"{name}: stored shape {arr.shape} != model shape {t.shape}")
            t.data = arr.copy()
        return model

    def memory(self) -> MemoryState:
        return MemoryState(Tensor(self.arrays[self.MEMORY_KEY].copy()), int(self.arrays[self.STEP_KEY][0]))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = json.dumps({"train": self.config.to_dict(), "n_entities": self.n_entities}, sort_keys=True).encode()
        chunks = [MAGIC, struct.pack("<III", VERSION, len(self.arrays), len(meta)), meta]
        for name, arr in self.arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            key = name.encode()
            chunks.append(struct.pack("<I", len(key)) + key)
            chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            chunks.append(arr.tobytes())
        path.write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        buf = Path(path).read_bytes()
        if buf[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version, count, meta_len = struct.unpack_from("<III", buf, 8)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 20
        meta = json.loads(buf[pos : pos + meta_len].decode())
        pos += meta_len
        arrays = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + n].decode()
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            arrays[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * size
        return cls(TrainConfig.from_dict(meta["train"]), arrays, int(meta["n_entities"]))


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------

@dataclass
class Splits:
    train: WindowBatch
    val: WindowBatch | None
    test: WindowBatch


def prepare(series: RawSeries, cfg: TrainConfig) -> Splits:
    """Normalise, split in time order and cut windows for each split."""
    parts = split_dataset(series, cfg.split)
    if cfg.normalize == "full":
        parts = tuple(zscore_normalize(p, reference=series) for p in parts)
    else:
        parts = tuple(zscore_normalize(p, reference=parts[0]) for p in parts)
    wins = [slide_windows(p, cfg.T, cfg.S) for p in parts]
    if len(wins) == 2:
        return Splits(wins[0], None, wins[1])
    return Splits(wins[0], wins[1], wins[-1])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, train, val)

    def model(self) -> GraphMoE:
        return self.checkpoint.model()


def _detached(memory: MemoryState) -> MemoryState:
    return MemoryState(memory.M.detach(), memory.step)


def _replay(model: GraphMoE, windows: np.ndarray, memory: MemoryState | None = None):
    """Mean NLL over ``windows`` without gradients, and the memory afterwards."""
    scores, _, memory = model.score(windows, memory)
    return float(scores.mean()) if scores.size else float("nan"), memory


def train(cfg: TrainConfig, data: WindowBatch, val: WindowBatch | None = None,
          on_epoch=None) -> TrainResult:
    """Fit the detector by minimising the mean flow NLL with Adam.

    Windows are visited in time order every epoch so the router memory sees
    history in sequence; the memory restarts at each epoch and is carried
    (detached) from one batch to the next. ``on_epoch(epoch, model)`` is
    called after every epoch if given.
    """
    if data.T != cfg.T:
        raise ValueError(f"windows have length {data.T}, config expects T={cfg.T}")
    K = data.windows.shape[1]
    model = GraphMoE.init(cfg)
    params = model.parameters()
    opt = Adam(params, cfg.lr)
    trace: list[tuple[int, float, float]] = []
    last_good = Checkpoint.from_model(model, model.reset_memory(), K)
    N = len(data)

    for epoch in range(1, cfg.epochs + 1):
        memory = model.reset_memory()
        total = 0.0
        for lo in range(0, N, cfg.batch_size):
            batch = data.windows[lo : lo + cfg.batch_size]
            try:
                for p in params:
                    p.grad = None
                with Tape():
                    loss, memory = model.loss(batch, memory)
                backward(loss)
                if cfg.clip_norm is not None:
                    clip_grad_norm(params, cfg.clip_norm)
                opt.step()
                if not all(np.all(np.isfinite(p.data)) for p in params):
                    raise NumericError("parameters became non-finite after update")
            except NumericError as err:
                raise TrainingDiverged(f"epoch {epoch}, batch at window {lo}: {err}", last_good, trace) from err
            memory = _detached(memory)
            total += loss.item() * batch.shape[0]
        train_nll = total / N
        end_memory = None
        val_nll = float("nan")
        if val is not None and len(val):
            _, end_memory = _replay(model, data.windows)
            val_nll, _ = _replay(model, val.windows, end_memory)
        trace.append((epoch, train_nll, val_nll))
        log.info("epoch %d train_nll %.4f val_nll %.4f", epoch, train_nll, val_nll)
        last_good = Checkpoint.from_model(model, end_memory or model.reset_memory(), K)
        if on_epoch is not None:
            on_epoch(epoch, model)

    _, final_memory = _replay(model, data.windows)
    return TrainResult(Checkpoint.from_model(model, final_memory, K), trace)


def write_trace(trace, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["epoch,train_nll,val_nll"]
    for epoch, tr, va in trace:
        lines.append(f"{epoch},{tr!r},{'' if np.isnan(va) else repr(va)}")
    path.write_text("\n".join(lines) + "\n")


def evaluate(result: TrainResult | Checkpoint, test: WindowBatch):
    """Score ``test`` continuing from the trained memory; returns (scores, R, RocResult|None)."""
    ckpt = result.checkpoint if isinstance(result, TrainResult) else result
    model = ckpt.model()
    scores, R, _ = model.score(test.windows, ckpt.memory())
    labels = test.window_labels
    roc = auroc(scores, labels) if 0 < labels.sum() < labels.size else None
    return scores, R, roc


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

TOGGLES = ((False, False), (False, True), (True, False), (True, True))


def run_cell(cfg: TrainConfig, series: RawSeries) -> float:
    splits = prepare(series, cfg)
    result = train(cfg, splits.train, splits.val)
    _, _, roc = evaluate(result, splits.test)
    return roc.auroc


def ablate(cfg: TrainConfig, series: RawSeries, seeds=(0, 1, 2), experts=(1, 2, 3, 4),
           toggles=TOGGLES):
    """AUROC for every MoE x MAR toggle cell and for an expert-count sweep.

    Returns ``(toggle_rows, sweep_rows)`` where toggle rows are
    ``(moe, mar, auroc_mean, auroc_std, per_seed)`` and sweep rows are
    ``(n_experts, auroc_mean, auroc_std, per_seed)``. The data stay fixed;
    only the model seed varies.
    """
    toggle_rows = []
    for moe, mar in toggles:
        vals = [run_cell(replace(cfg, moe_enabled=moe, mar_enabled=mar, seed=s), series) for s in seeds]
        toggle_rows.append((moe, mar, float(np.mean(vals)), float(np.std(vals)), vals))
        log.info("moe=%s mar=%s auroc=%.4f", moe, mar, np.mean(vals))
    sweep_rows = []
    for n in experts:
        vals = [run_cell(replace(cfg, n_experts=n, moe_enabled=True, mar_enabled=True, seed=s), series)
                for s in seeds]
        sweep_rows.append((n, float(np.mean(vals)), float(np.std(vals)), vals))
        log.info("experts=%d auroc=%.4f", n, np.mean(vals))
    return toggle_rows, sweep_rows


def write_ablation(toggle_rows, sweep_rows, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    a = out_dir / "ablation.csv"
    a.write_text(
        "moe,mar,auroc_mean,auroc_std\n"
        + "".join(f"{int(m)},{int(r)},{mean!r},{std!r}\n" for m, r, mean, std, _ in toggle_rows)
    )
    b = out_dir / "experts.csv"
    b.write_text(
        "n_experts,auroc_mean,auroc_std\n"
        + "".join(f"{n},{mean!r},{std!r}\n" for n, mean, std, _ in sweep_rows)
    )
    return a, b
