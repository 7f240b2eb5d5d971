"""Evaluation metrics for early, stable video-level classification.

A *prediction stream* is one video's sequence of per-window class
probability vectors together with the video label.  A window scores a *hit*
when its argmax class is correct and its confidence strictly exceeds the
threshold ``tau``.  The earliness-stability score of a stream,

    ES(n, v) = (w_max - w + S(w, n)) / w_max        if some window hits,
             = 0                                     otherwise,

uses the earliest hit window ``w`` and the follow-up stability

    S(w, n) = (1/n) * sum_{j=w+1}^{min(w+n-1, P)} hit(j),

so earlier first hits and persistent correctness both raise the score.
``ESV(n)`` averages ES over videos and ``mean_es`` averages ESV over
n in {1, 3, 5}.  Note a stream whose only hit lands at ``w = w_max`` scores
0 under n = 1, indistinguishable from a stream that never hits; that is the
formula read verbatim.

All functions are pure over immutable streams and safe to evaluate in
parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "PredictionStream", "EvalReport", "hit", "stream_hits", "stability",
    "es", "esv", "mean_es", "top1_accuracy", "macro_f1", "qwk", "evaluate",
    "write_streams", "read_streams",
]

DEFAULT_TAU = 0.70
STABILITY_HORIZONS = (1, 3, 5)
PROB_TOL = 1e-6


@dataclass(frozen=True)
class PredictionStream:
    """Per-video prediction sequence over observation windows ``1..P``."""

    video_id: str
    probs: np.ndarray          # (P, C) rows summing to 1
    label: int
    w_max: int = 18
    scale_id: str = ""

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2 or probs.shape[0] < 1:
            raise ValueError(f"probs must be (P, C) with P >= 1, got {probs.shape}")
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROB_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(
                f"stream {self.video_id!r}: probabilities at window {bad + 1} "
                f"sum to {sums[bad]:.8f}, not 1"
            )
        if not 0 <= self.label < probs.shape[1]:
            raise ValueError(f"label {self.label} outside [0, {probs.shape[1]})")
        if self.w_max < 1:
            raise ValueError("w_max must be >= 1")

    @property
    def num_windows(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


def hit(probs: np.ndarray, label: int, tau: float = DEFAULT_TAU) -> bool:
    """True iff argmax(probs) == label and max(probs) > tau (strictly).

    Argmax ties break toward the lowest class index so the outcome is
    deterministic.
    """
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    probs = np.asarray(probs, dtype=np.float64)
    pred = int(np.argmax(probs))
    return pred == int(label) and probs[pred] > tau


def stream_hits(stream: PredictionStream, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Boolean hit flags for windows ``1..P`` (index 0 is window 1)."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    preds = np.argmax(stream.probs, axis=1)
    confidence = stream.probs[np.arange(stream.num_windows), preds]
    return (preds == stream.label) & (confidence > tau)


def stability(w: int, n: int, hits: np.ndarray) -> float:
    """Fraction of the ``n``-window follow-up of ``w`` that stays a hit.

    ``hits`` holds flags for windows ``1..P``.  The summation range
    ``w+1 .. min(w+n-1, P)`` is empty for ``n = 1`` or ``w = P`` and then the
    stability is 0.
    """
    hits = np.asarray(hits, dtype=bool)
    p = len(hits)
    if not 1 <= w <= p:
        raise ValueError(f"w={w} outside [1, {p}]")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    upper = min(w + n - 1, p)
    if upper <= w:
        return 0.0
    return float(hits[w:upper].sum()) / n


def es(n: int, stream: PredictionStream, tau: float = DEFAULT_TAU) -> float:
    """Earliness-stability score of one stream; 0 when no window hits."""
    hits = stream_hits(stream, tau)
    if not hits.any():
        return 0.0
    w = int(np.argmax(hits)) + 1  # earliest hit window
    return (stream.w_max - w + stability(w, n, hits)) / stream.w_max


def esv(n: int, streams: list[PredictionStream], tau: float = DEFAULT_TAU) -> float:
    """Mean ES over a nonempty collection of streams."""
    if not streams:
        raise ValueError("esv needs at least one stream")
    return float(np.mean([es(n, s, tau) for s in streams]))


def mean_es(streams: list[PredictionStream], tau: float = DEFAULT_TAU) -> float:
    """Average of ESV at the stability horizons n in {1, 3, 5}; lies in [0, 1)."""
    return float(np.mean([esv(n, streams, tau) for n in STABILITY_HORIZONS]))


def top1_accuracy(streams: list[PredictionStream]) -> float:
    """Window-level accuracy averaged per video, then across videos, in percent."""
    if not streams:
        raise ValueError("top1_accuracy needs at least one stream")
    per_video = [
        float(np.mean(np.argmax(s.probs, axis=1) == s.label)) for s in streams
    ]
    return 100.0 * float(np.mean(per_video))


def _confusion(y_true: np.ndarray, y_pred: np.ndarray, c: int) -> np.ndarray:
    counts = np.zeros((c, c), dtype=np.float64)
    np.add.at(counts, (y_true, y_pred), 1.0)
    return counts


def _macro_f1_from_counts(counts: np.ndarray) -> float:
    """Macro F1 over classes with any true or predicted instance; in percent.

    Classes with zero predicted and zero actual instances are skipped rather
    than counted as perfect or failed.
    """
    actual = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    keep = (actual > 0) | (predicted > 0)
    tp = np.diag(counts)[keep]
    denom = actual[keep] + predicted[keep]
    f1 = np.divide(2.0 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return 100.0 * float(np.mean(f1))


def _qwk_from_counts(counts: np.ndarray) -> float:
    """Quadratic-weighted kappa from a confusion-count matrix.

    With expected disagreement zero — all mass on one diagonal cell, i.e.
    perfect agreement on a degenerate window — kappa is defined as 1.  (A
    zero expected disagreement with nonzero observed disagreement cannot
    occur; the 0 return is a defensive guard.)
    """
    c = counts.shape[0]
    total = counts.sum()
    idx = np.arange(c, dtype=np.float64)
    weights = (idx[:, None] - idx[None, :]) ** 2
    if c > 1:
        weights /= (c - 1) ** 2
    expected = np.outer(counts.sum(axis=1), counts.sum(axis=0)) / total
    num = float((weights * counts).sum())
    den = float((weights * expected).sum())
    if den == 0.0:
        return 1.0 if num == 0.0 else 0.0
    return 1.0 - num / den


def _window_groups(streams: list[PredictionStream]):
    """Yield (window, y_true, y_pred) across videos for each window index."""
    max_p = max(s.num_windows for s in streams)
    for w in range(1, max_p + 1):
        y_true, y_pred = [], []
        for s in streams:
            if s.num_windows >= w:
                y_true.append(s.label)
                y_pred.append(int(np.argmax(s.probs[w - 1])))
        yield w, np.asarray(y_true), np.asarray(y_pred)


def macro_f1(streams: list[PredictionStream], protocol: str = "per_window") -> float:
    """Macro F1 in percent.

    ``per_window`` (default): a macro F1 across videos at each window index,
    averaged over window indices.  ``per_video``: F1 over the windows of each
    video separately, then averaged across videos — degenerate because each
    video has a single label, but provided for protocol completeness.
    """
    if not streams:
        raise ValueError("macro_f1 needs at least one stream")
    c = streams[0].num_classes
    if protocol == "per_window":
        vals = [_macro_f1_from_counts(_confusion(yt, yp, c))
                for _, yt, yp in _window_groups(streams)]
        return float(np.mean(vals))
    if protocol == "per_video":
        vals = []
        for s in streams:
            y_true = np.full(s.num_windows, s.label)
            y_pred = np.argmax(s.probs, axis=1)
            vals.append(_macro_f1_from_counts(_confusion(y_true, y_pred, c)))
        return float(np.mean(vals))
    raise ValueError(f"unknown protocol {protocol!r}")


def qwk(streams: list[PredictionStream], protocol: str = "per_window") -> float:
    """Quadratic-weighted Cohen's kappa in [-1, 1]; protocols as in macro_f1."""
    if not streams:
        raise ValueError("qwk needs at least one stream")
    c = streams[0].num_classes
    if protocol == "per_window":
        vals = [_qwk_from_counts(_confusion(yt, yp, c))
                for _, yt, yp in _window_groups(streams)]
        return float(np.mean(vals))
    if protocol == "per_video":
        vals = []
        for s in streams:
            y_true = np.full(s.num_windows, s.label)
            y_pred = np.argmax(s.probs, axis=1)
            vals.append(_qwk_from_counts(_confusion(y_true, y_pred, c)))
        return float(np.mean(vals))
    raise ValueError(f"unknown protocol {protocol!r}")


@dataclass
class EvalReport:
    """Summary metrics plus per-video and per-window breakdown tables."""

    top1: float
    f1: float
    qwk: float
    esv1: float
    esv3: float
    esv5: float
    mean_es: float
    tau: float
    protocol: str = "per_window"
    per_video: list[dict] = field(default_factory=list)
    per_window: list[dict] = field(default_factory=list)

    SUMMARY_FIELDS = ("top1", "f1", "qwk", "esv1", "esv3", "esv5", "mean_es", "tau")

    def summary(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.SUMMARY_FIELDS}

    def write_csv(self, path: str | Path, extra: dict | None = None) -> Path:
        """One summary row; prepends any ``extra`` identification columns."""
        import csv

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        row = {**(extra or {}), **self.summary()}
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row))
            writer.writeheader()
            writer.writerow(row)
        return path

    def write_per_video_csv(self, path: str | Path) -> Path:
        import csv

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["video_id", "label", "first_hit_w", "es1", "es3", "es5"])
            writer.writeheader()
            writer.writerows(self.per_video)
        return path


def evaluate(streams: list[PredictionStream], tau: float = DEFAULT_TAU,
             protocol: str = "per_window") -> EvalReport:
    """Compute the full metric suite over a collection of streams."""
    if not streams:
        raise ValueError("evaluate needs at least one stream")
    per_video = []
    for s in streams:
        hits = stream_hits(s, tau)
        first = int(np.argmax(hits)) + 1 if hits.any() else 0
        per_video.append({
            "video_id": s.video_id,
            "label": s.label,
            "first_hit_w": first,
            "es1": es(1, s, tau),
            "es3": es(3, s, tau),
            "es5": es(5, s, tau),
        })
    per_window = []
    for w, yt, yp in _window_groups(streams):
        counts = _confusion(yt, yp, streams[0].num_classes)
        hit_rate = float(np.mean([
            stream_hits(s, tau)[w - 1] for s in streams if s.num_windows >= w]))
        per_window.append({
            "w": w,
            "top1": 100.0 * float(np.mean(yt == yp)),
            "f1": _macro_f1_from_counts(counts),
            "qwk": _qwk_from_counts(counts),
            "hit_rate": hit_rate,
        })
    return EvalReport(
        top1=top1_accuracy(streams),
        f1=macro_f1(streams, protocol),
        qwk=qwk(streams, protocol),
        esv1=esv(1, streams, tau),
        esv3=esv(3, streams, tau),
        esv5=esv(5, streams, tau),
        mean_es=mean_es(streams, tau),
        tau=tau,
        protocol=protocol,
        per_video=per_video,
        per_window=per_window,
    )


# -- stream files -------------------------------------------------------------
#
# Line-delimited JSON, one record per (video, window):
#   {"video_id": ..., "scale": ..., "w": int, "probs": [C reals], "label": int}


def write_streams(streams: list[PredictionStream], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for s in streams:
            for i in range(s.num_windows):
                record = {
                    "video_id": s.video_id,
                    "scale": s.scale_id,
                    "w": i + 1,
                    "probs": [float(p) for p in s.probs[i]],
                    "label": int(s.label),
                }
                fh.write(json.dumps(record) + "\n")
    return path


def read_streams(path: str | Path, w_max: int = 18) -> list[PredictionStream]:
    """Parse a stream file back into streams; round-trips ``write_streams``."""
    groups: dict[tuple[str, str], list[dict]] = {}
    with open(Path(path)) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{line_no}: bad JSON record: {err}") from err
            groups.setdefault((record["video_id"], record.get("scale", "")), []).append(record)
    streams = []
    for (video_id, scale), records in groups.items():
        records.sort(key=lambda r: r["w"])
        ws = [r["w"] for r in records]
        if ws != list(range(1, len(ws) + 1)):
            raise DataError(
                f"stream {video_id!r}: windows {ws} are not contiguous from 1")
        labels = {r["label"] for r in records}
        if len(labels) != 1:
            raise DataError(f"stream {video_id!r}: inconsistent labels {sorted(labels)}")
        probs = np.array([r["probs"] for r in records], dtype=np.float64)
        try:
            stream = PredictionStream(video_id, probs, labels.pop(),
                                      w_max=w_max, scale_id=scale)
        except ValueError as err:
            raise DataError(f"{path}: {err}") from err
        streams.append(stream)
    return streams
