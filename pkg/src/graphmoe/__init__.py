"""Graph mixture-of-experts anomaly detection for multivariate time series."""

from .autodiff import NumericError, ShapeError, Tape, TapeError, Tensor, apply, backward, grad_check
from .data import RawSeries, WindowBatch, load_csv, slide_windows, split_dataset, write_csv, zscore_normalize
from .metrics import RocResult, auroc, score_report
from .model import GraphMoE, TrainConfig
from .synth import AnomalySpec, GenConfig, default_config, generate
from .trainer import Checkpoint, ablate, evaluate, prepare, train

__version__ = "0.1.0"
