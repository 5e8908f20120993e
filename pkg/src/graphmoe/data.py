"""CSV ingestion, z-score normalisation, temporal splits and sliding windows."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STD_FLOOR = 1e-8


class ParseError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class SplitConfigError(ValueError):
    pass


@dataclass
class RawSeries:
    """K entities observed over ``length`` time steps.

    ``values`` is K x L_obs; ``labels`` (optional) marks anomalous points.
    ``offset`` is the index of the first column in the original series, so
    splits keep their absolute time positions.
    """

    entity_names: list[str]
    values: np.ndarray
    labels: np.ndarray | None = None
    offset: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"values must be K x L_obs, got shape {self.values.shape}")
        if len(self.entity_names) != self.values.shape[0]:
            raise ValueError("entity_names length does not match value rows")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.values.shape[1],):
                raise ValueError("labels length does not match L_obs")

    @property
    def n_entities(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowBatch:
    windows: np.ndarray  # (N_w, K, T)
    window_labels: np.ndarray  # (N_w,)
    T: int
    S: int
    starts: np.ndarray = field(default=None)  # absolute start index of each window

    def __len__(self) -> int:
        return self.windows.shape[0]


def load_csv(path: str | Path) -> RawSeries:
    """Read a header-first CSV with one time step per row.

    A trailing column named ``label`` is taken as point labels in {0, 1}.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise EmptyInputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_label = header[-1].lower() == "label"
    names = header[:-1] if has_label else header
    if not names:
        raise ParseError(f"{path}: header names no entities")
    body = rows[1:]
    if not body:
        raise EmptyInputError(f"{path}: no data rows")
    data = np.empty((len(body), len(header)), dtype=np.float64)
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise ParseError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise ParseError(f"{path}: line {line}, column {header[j]!r}: missing value")
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: line {line}, column {header[j]!r}: non-numeric value {cell!r}"
                ) from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: line {line}, column {header[j]!r}: non-finite value")
            data[i, j] = v
    labels = None
    if has_label:
        lab = data[:, -1]
        if not np.all((lab == 0) | (lab == 1)):
            bad = int(np.flatnonzero((lab != 0) & (lab != 1))[0]) + 2
            raise ParseError(f"{path}: line {bad}, column 'label': labels must be 0 or 1")
        labels = lab.astype(np.int64)
        data = data[:, :-1]
    return RawSeries(list(names), data.T.copy(), labels)


def write_csv(series: RawSeries, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(series.entity_names)
        if series.labels is not None:
            header.append("label")
        w.writerow(header)
        for t in range(series.length):
            row = [repr(float(v)) for v in series.values[:, t]]
            if series.labels is not None:
                row.append(str(int(series.labels[t])))
            w.writerow(row)


def zscore_stats(series: RawSeries) -> tuple[np.ndarray, np.ndarray]:
    """Per-entity mean and (population) std, std floored at STD_FLOOR."""
    if series.length < 2:
        raise InsufficientDataError("z-score needs at least 2 observations")
    mean = series.values.mean(axis=1)
    std = series.values.std(axis=1)
    return mean, np.maximum(std, STD_FLOOR)


def zscore_normalize(series: RawSeries, reference: RawSeries | None = None) -> RawSeries:
    """Standardise each entity along time.

    Statistics come from ``series`` itself unless ``reference`` is given
    (e.g. the training split only).
    """
    mean, std = zscore_stats(reference if reference is not None else series)
    values = (series.values - mean[:, None]) / std[:, None]
    return RawSeries(list(series.entity_names), values, series.labels, series.offset)


def slide_windows(series: RawSeries, T: int = 60, S: int = 10) -> WindowBatch:
    """Cut windows ``[cS, cS+T)``; the trailing remainder is dropped.

    A window is labelled anomalous iff any point it covers is.
    """
    if S < 1 or T < 1:
        raise ValueError(f"window size and stride must be positive (T={T}, S={S})")
    if T > series.length:
        raise InsufficientDataError(f"window size {T} exceeds series length {series.length}")
    n = (series.length - T) // S + 1
    starts = np.arange(n) * S
    idx = starts[:, None] + np.arange(T)[None, :]
    windows = np.ascontiguousarray(series.values[:, idx].transpose(1, 0, 2))
    if series.labels is None:
        labels = np.zeros(n, dtype=np.int64)
    else:
        labels = series.labels[idx].max(axis=1).astype(np.int64)
    return WindowBatch(windows, labels, T, S, starts + series.offset)


def parse_scheme(scheme: str | Sequence[float]) -> tuple[float, ...]:
    if isinstance(scheme, str):
        try:
            parts = tuple(float(p) / 100.0 for p in scheme.split("/"))
        except ValueError:
            raise SplitConfigError(f"bad split scheme {scheme!r}") from None
    else:
        parts = tuple(float(p) for p in scheme)
    if len(parts) < 2 or any(p <= 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-9:
        raise SplitConfigError(f"split ratios must be positive and sum to 1, got {parts}")
    return parts


def split_dataset(series: RawSeries, scheme: str | Sequence[float] = "60/20/20") -> tuple[RawSeries, ...]:
    """Contiguous temporal split; every split but the last gets floor(r * L)."""
    ratios = parse_scheme(scheme)
    L = series.length
    sizes = [int(math.floor(r * L + 1e-9)) for r in ratios[:-1]]
    sizes.append(L - sum(sizes))
    out = []
    start = 0
    for n in sizes:
        sl = slice(start, start + n)
        labels = None if series.labels is None else series.labels[sl].copy()
        out.append(
            RawSeries(list(series.entity_names), series.values[:, sl].copy(), labels, series.offset + start)
        )
        start += n
    return tuple(out)
