"""Experiment orchestration: reproducible runs from a manifest.

A :class:`RunManifest` pins everything a run depends on — dataset recipe,
scale, model and training configuration, seed, evaluation threshold — so two
runs from equal manifests produce identical reports.  ``run_experiment``
executes synth → split → train → eval → export and leaves a self-contained
artifact directory; ``ablate`` sweeps one dimension across values (and
optionally seeds) and writes a combined summary table.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import (ScaleDataset, TrainData, VideoRecord,
                       build_scale_dataset, predict_streams, read_manifest,
                       synth_dataset, write_manifest)
from .metrics import (DEFAULT_TAU, EvalReport, PredictionStream, esv,
                      evaluate, stream_hits, write_streams)
from .model import ModelConfig, SnapshotModel, load_checkpoint, save_checkpoint
from .training import TrainConfig, train, write_train_log

__all__ = ["DataConfig", "RunManifest", "StageError", "run_experiment",
           "ablate", "write_prediction_grid", "write_esv_curve",
           "export_attention"]


@dataclass(frozen=True)
class DataConfig:
    """Synthetic corpus recipe (ignored when an existing manifest is supplied)."""

    num_videos: int = 100
    dataset_seed: int = 0
    cue_width: float = 3.0
    cue_amplitude: float = 2.0
    noise_scale: float = 1.0
    cue_density: float = 0.4
    rater_flip: float = 0.1
    balanced: bool = False
    min_length: int = 18
    max_length: int = 24
    d: int = 64
    h_p: int = 4
    w_p: int = 4


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce one training + evaluation run."""

    seed: int = 0
    scale: str = "pgs"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    tau: float = DEFAULT_TAU
    out_dir: str = "runs/run0"
    dataset_manifest: str | None = None  # path to an existing JSONL corpus

    @property
    def variant(self) -> str:
        return self.model.variant

    def to_json(self) -> str:
        payload = asdict(self)
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RunManifest":
        raw = json.loads(text)
        raw["model"] = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v
                                      for k, v in raw["model"].items()})
        tr = {k: tuple(v) if isinstance(v, list) else v for k, v in raw["train"].items()}
        raw["train"] = TrainConfig(**tr)
        raw["data"] = DataConfig(**raw["data"])
        return RunManifest(**raw)

    def hash(self) -> str:
        digest = hashlib.sha256(self.to_json().encode()).hexdigest()
        return digest[:12]

    def paths(self) -> dict[str, Path]:
        out = Path(self.out_dir)
        return {
            "out": out,
            "manifest": out / "run_manifest.json",
            "dataset": (Path(self.dataset_manifest) if self.dataset_manifest
                        else out / "dataset.jsonl"),
            "splits": out / "splits.json",
            "checkpoint": out / "checkpoint.npz",
            "checkpoint_final": out / "checkpoint_final.npz",
            "train_log": out / "train_log.csv",
            "streams": out / "streams.jsonl",
            "report": out / "report.csv",
            "per_video": out / "per_video_es.csv",
            "per_window": out / "per_window_metrics.csv",
            "grid": out / "prediction_grid.csv",
            "esv_curve": out / "esv_curve.csv",
            "attention": out / "attention.npz",
            "result": out / "result.json",
        }


class StageError(RuntimeError):
    """A run stage failed; carries the stage name and the manifest hash."""

    def __init__(self, stage: str, manifest: RunManifest, cause: BaseException):
        super().__init__(f"stage {stage!r} failed for manifest {manifest.hash()}: {cause}")
        self.stage = stage
        self.manifest_hash = manifest.hash()
        self.cause = cause


def _load_or_synth_records(manifest: RunManifest) -> list[VideoRecord]:
    paths = manifest.paths()
    if manifest.dataset_manifest:
        return read_manifest(paths["dataset"])
    d = manifest.data
    records = synth_dataset(
        num_videos=d.num_videos, seed=d.dataset_seed, cue_width=d.cue_width,
        cue_amplitude=d.cue_amplitude, noise_scale=d.noise_scale,
        cue_density=d.cue_density, rater_flip=d.rater_flip,
        w_max=manifest.model.w_max,
        min_length=d.min_length, max_length=d.max_length,
        d=d.d, h_p=d.h_p, w_p=d.w_p, balanced=d.balanced,
    )
    write_manifest(records, paths["dataset"])
    return records


def write_prediction_grid(streams: Sequence[PredictionStream], tau: float,
                          path: str | Path) -> Path:
    """Long-form per-window predictions: one row per (video, window)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "label", "w", "pred", "confidence", "hit"])
        for s in streams:
            hits = stream_hits(s, tau)
            preds = np.argmax(s.probs, axis=1)
            for i in range(s.num_windows):
                writer.writerow([
                    s.video_id, s.label, i + 1, int(preds[i]),
                    f"{s.probs[i, preds[i]]:.6f}", int(hits[i]),
                ])
    return path


def write_esv_curve(streams: Sequence[PredictionStream], tau: float,
                    path: str | Path, horizons: Sequence[int] = range(1, 9)) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "esv"])
        for n in horizons:
            writer.writerow([n, f"{esv(n, list(streams), tau):.6f}"])
    return path


def export_attention(attention: dict[str, np.ndarray], path: str | Path) -> Path:
    """Inter-snapshot attention weights: per-block ``(batch, heads, q, k)``
    arrays plus the token → snapshot index map."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **attention)
    return path


def _write_per_window_csv(report: EvalReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["w", "top1", "f1", "qwk", "hit_rate"])
        writer.writeheader()
        for row in report.per_window:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v)
                             for k, v in row.items()})


def run_experiment(manifest: RunManifest) -> EvalReport:
    """Execute the full pipeline for one manifest; see module docstring."""
    paths = manifest.paths()
    paths["out"].mkdir(parents=True, exist_ok=True)
    paths["manifest"].write_text(manifest.to_json())

    stage = "synth"
    try:
        records = _load_or_synth_records(manifest)

        stage = "split"
        dataset = build_scale_dataset(
            records, manifest.scale, split_seed=manifest.seed,
            w_max=manifest.model.w_max, feature_seed=manifest.data.dataset_seed)
        paths["splits"].write_text(json.dumps(dataset.splits, indent=2))

        stage = "train"
        model = SnapshotModel(manifest.model, seed=manifest.seed)
        data = TrainData(dataset, manifest.model, seed=manifest.seed,
                         feature_jitter=manifest.train.feature_jitter)
        result = train(model, data, manifest.train)
        write_train_log(result.log, paths["train_log"])
        save_checkpoint(model, paths["checkpoint_final"])
        result.restore_best()
        save_checkpoint(model, paths["checkpoint"])

        stage = "eval"
        if manifest.variant == "gl-sca":
            streams, attention = predict_streams(model, dataset, "test",
                                                 capture_attention=True)
        else:
            streams, attention = predict_streams(model, dataset, "test"), {}
        write_streams(streams, paths["streams"])
        report = evaluate(streams, tau=manifest.tau)

        stage = "export"
        report.write_csv(paths["report"], extra={
            "scale": manifest.scale, "variant": manifest.variant,
            "seed": manifest.seed})
        report.write_per_video_csv(paths["per_video"])
        _write_per_window_csv(report, paths["per_window"])
        write_prediction_grid(streams, manifest.tau, paths["grid"])
        write_esv_curve(streams, manifest.tau, paths["esv_curve"])
        if attention:
            export_attention(attention, paths["attention"])
        summary = {**report.summary(), "scale": manifest.scale,
                   "variant": manifest.variant, "seed": manifest.seed,
                   "best_epoch": result.best_epoch,
                   "manifest_hash": manifest.hash()}
        paths["result"].write_text(json.dumps(summary, indent=2, sort_keys=True))
    except Exception as err:
        raise StageError(stage, manifest, err) from err
    return report


def evaluate_checkpoint(checkpoint: str | Path, dataset: ScaleDataset,
                        tau: float = DEFAULT_TAU,
                        split: str = "test") -> tuple[EvalReport, list[PredictionStream]]:
    """Re-run deterministic evaluation of a saved model on a dataset split."""
    model = load_checkpoint(checkpoint)
    streams = predict_streams(model, dataset, split)
    return evaluate(streams, tau=tau), streams


ABLATION_DIMENSIONS = ("t", "k", "sca")


def _manifest_with(base: RunManifest, dimension: str, value, seed: int,
                   out_dir: Path) -> RunManifest:
    model = base.model
    if dimension == "t":
        model = dataclasses.replace(model, t=int(value))
    elif dimension == "k":
        model = dataclasses.replace(model, k=int(value))
    elif dimension == "sca":
        on = str(value).lower() in ("on", "true", "1", "yes")
        model = dataclasses.replace(model, variant="gl-sca" if on else "gl")
    else:
        raise ValueError(f"dimension must be one of {ABLATION_DIMENSIONS}, got {dimension!r}")
    return dataclasses.replace(base, model=model, seed=seed, out_dir=str(out_dir))


def ablate(dimension: str, values: Sequence, base: RunManifest,
           seeds: Sequence[int] | None = None) -> list[dict]:
    """One run per (value, seed); returns rows and writes ``sweep.csv``.

    Rows carry the full metric summary; per-value medians over seeds land in
    ``sweep_median.csv`` for quick trend reads.
    """
    if dimension not in ABLATION_DIMENSIONS:
        raise ValueError(f"dimension must be one of {ABLATION_DIMENSIONS}, got {dimension!r}")
    if not values:
        raise ValueError("ablate needs at least one value")
    seeds = list(seeds) if seeds else [base.seed]
    sweep_dir = Path(base.out_dir)
    rows = []
    for value in values:
        for seed in seeds:
            run_dir = sweep_dir / f"{dimension}_{value}_seed{seed}"
            manifest = _manifest_with(base, dimension, value, seed, run_dir)
            report = run_experiment(manifest)
            rows.append({"dimension": dimension, "value": value, "seed": seed,
                         **report.summary()})
    sweep_dir.mkdir(parents=True, exist_ok=True)
    with open(sweep_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    with open(sweep_dir / "sweep_median.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dimension", "value", "median_mean_es", "median_top1"])
        for value in values:
            group = [r for r in rows if r["value"] == value]
            writer.writerow([
                dimension, value,
                f"{float(np.median([r['mean_es'] for r in group])):.6f}",
                f"{float(np.median([r['top1'] for r in group])):.4f}",
            ])
    return rows
