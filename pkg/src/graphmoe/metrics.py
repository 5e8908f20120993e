"""AUROC and score-distribution reports (CSV + static SVG)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

N_BINS = 50


class UndefinedMetricError(ValueError):
    pass


@dataclass
class RocResult:
    auroc: float
    curve: list[tuple[float, float]]
    n_pos: int
    n_neg: int


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores vs {labels.size} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative label")
    return scores, labels.astype(np.int64)


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(fpr, tpr) points from a descending sweep over unique scores."""
    scores, labels = _validate(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    n_pos, n_neg = int(y.sum()), int(y.size - y.sum())
    pts = [(0.0, 0.0)] + [(f / n_neg, t / n_pos) for f, t in zip(fp.tolist(), tp.tolist())]
    return pts


def auroc(scores, labels) -> RocResult:
    """Mann-Whitney AUROC with average ranks for ties (ties count one half)."""
    scores, labels = _validate(scores, labels)
    ranks = rankdata(scores, method="average")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return RocResult(float(u / (n_pos * n_neg)), roc_curve(scores, labels), n_pos, n_neg)


def histograms(scores, labels, bins: int = N_BINS):
    """Per-class normalised histograms over the common min-max score range."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    lo, hi = float(scores.min()), float(scores.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    out = {}
    for name, cls in (("normal", 0), ("anomaly", 1)):
        sel = scores[labels == cls]
        counts, _ = np.histogram(sel, bins=edges)
        mass = counts / sel.size if sel.size else counts.astype(np.float64)
        out[name] = mass
    return edges, out


def _svg(width: int, height: int, body: list[str]) -> str:
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
            *body,
            "</svg>",
            "",
        ]
    )


def histogram_svg(edges: np.ndarray, masses: dict[str, np.ndarray]) -> str:
    W, H, pad = 640, 320, 40
    peak = max(float(m.max()) if m.size else 0.0 for m in masses.values()) or 1.0
    n = edges.size - 1
    bw = (W - 2 * pad) / n
    body = []
    colours = {"normal": "#1f77b4", "anomaly": "#d62728"}
    for name, mass in masses.items():
        for i, m in enumerate(mass):
            if m <= 0:
                continue
            h = (H - 2 * pad) * m / peak
            body.append(
                f'<rect x="{pad + i * bw:.2f}" y="{H - pad - h:.2f}" width="{bw:.2f}" '
                f'height="{h:.2f}" fill="{colours[name]}" fill-opacity="0.5"/>'
            )
    body.append(f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>')
    body.append(f'<text x="{pad}" y="{H - 10}" font-size="12">{edges[0]:.3g}</text>')
    body.append(f'<text x="{W - pad}" y="{H - 10}" font-size="12" text-anchor="end">{edges[-1]:.3g}</text>')
    body.append(f'<text x="{W / 2}" y="20" font-size="14" text-anchor="middle">anomaly score distribution '
                '(blue: normal, red: anomaly)</text>')
    return _svg(W, H, body)


def timeline_svg(starts, scores, labels, T: int | None = None) -> str:
    W, H, pad = 800, 320, 40
    starts = np.asarray(starts, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    x0, x1 = float(starts.min()), float(starts.max()) or 1.0
    if x1 <= x0:
        x1 = x0 + 1.0
    y0, y1 = float(scores.min()), float(scores.max())
    if y1 <= y0:
        y1 = y0 + 1.0
    px = lambda v: pad + (W - 2 * pad) * (v - x0) / (x1 - x0)  # noqa: E731
    py = lambda v: H - pad - (H - 2 * pad) * (v - y0) / (y1 - y0)  # noqa: E731
    body = []
    step = (x1 - x0) / max(starts.size - 1, 1)
    for s, lab in zip(starts, labels):
        if lab:
            body.append(f'<rect x="{px(s) - 0.5 * step * (W - 2 * pad) / (x1 - x0):.2f}" y="{pad}" '
                        f'width="{step * (W - 2 * pad) / (x1 - x0):.2f}" height="{H - 2 * pad}" '
                        'fill="#d62728" fill-opacity="0.2"/>')
    pts = " ".join(f"{px(s):.2f},{py(v):.2f}" for s, v in zip(starts, scores))
    body.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="1"/>')
    for s, v in zip(starts, scores):
        body.append(f'<circle cx="{px(s):.2f}" cy="{py(v):.2f}" r="1.5" fill="#1f77b4"/>')
    body.append(f'<text x="{W / 2}" y="20" font-size="14" text-anchor="middle">anomaly score over time '
                '(red background: anomalous windows)</text>')
    return _svg(W, H, body)


def score_report(scores, labels, out_dir: str | Path, starts=None) -> dict[str, Path]:
    """Write class histograms, a score timeline and SVG renderings of both."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.size == 0:
        raise ValueError("score_report: empty input")
    if labels.shape != scores.shape:
        raise ValueError("score_report: scores and labels differ in length")
    starts = np.arange(scores.size) if starts is None else np.asarray(starts)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    edges, masses = histograms(scores, labels)
    paths = {}
    for name, mass in masses.items():
        p = out_dir / f"hist_{name}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "mass"])
            if (labels == (1 if name == "anomaly" else 0)).any():
                for i, m in enumerate(mass):
                    w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), repr(float(m))])
        paths[f"hist_{name}"] = p
    p = out_dir / "timeline.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_index", "start_index", "score", "label"])
        for i, (s, v, lab) in enumerate(zip(starts, scores, labels)):
            w.writerow([i, int(s), repr(float(v)), int(lab)])
    paths["timeline"] = p
    paths["histogram_svg"] = out_dir / "histogram.svg"
    paths["histogram_svg"].write_text(histogram_svg(edges, masses))
    paths["timeline_svg"] = out_dir / "timeline.svg"
    paths["timeline_svg"].write_text(timeline_svg(starts, scores, labels))
    return paths
