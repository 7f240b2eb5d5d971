"""Command-line interface.

Verbs: ``synth`` (generate a dataset manifest), ``split``, ``train``,
``eval``, ``metrics`` (stream file -> report), ``ablate`` and ``report``.
Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .datasets import (SCALES, build_scale_dataset, predict_streams,
                       read_manifest, synth_dataset, write_manifest)
from .errors import DataError
from .harness import (DataConfig, RunManifest, StageError, ablate,
                      write_esv_curve, write_prediction_grid)
from .metrics import evaluate, read_streams, write_streams
from .model import ModelConfig, VARIANTS, load_checkpoint, save_checkpoint
from .sampling import InsufficientFramesError
from .training import NumericalError, TrainConfig, train, write_train_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ValueError(f"config file {path}: invalid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path}: expected a JSON object")
    return raw


def _merged(section: dict, overrides: dict) -> dict:
    out = dict(section)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _build_manifest(args: argparse.Namespace) -> RunManifest:
    config = _load_config_file(getattr(args, "config", None))
    model_kwargs = _merged(config.get("model", {}), {
        "variant": getattr(args, "variant", None),
        "t": getattr(args, "t", None),
        "k": getattr(args, "k", None),
        "num_classes": SCALES[args.scale].num_classes,
        "w_max": getattr(args, "w_max", None),
    })
    train_kwargs = _merged(config.get("train", {}), {
        "epochs": getattr(args, "epochs", None),
        "learning_rate": getattr(args, "lr", None),
        "seed": args.seed,
    })
    data_kwargs = _merged(config.get("data", {}), {
        "num_videos": getattr(args, "n_videos", None),
    })
    for key in ("lr_decay_epochs",):
        if key in train_kwargs and isinstance(train_kwargs[key], list):
            train_kwargs[key] = tuple(train_kwargs[key])
    tau = args.tau if args.tau is not None else config.get("tau", 0.70)
    return RunManifest(
        seed=args.seed,
        scale=args.scale,
        model=ModelConfig(**model_kwargs),
        train=TrainConfig(**train_kwargs),
        data=DataConfig(**data_kwargs),
        tau=tau,
        out_dir=str(args.out),
        dataset_manifest=getattr(args, "manifest", None),
    )


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scale", choices=sorted(SCALES), default="pgs")
    parser.add_argument("--variant", choices=VARIANTS, default=None)
    parser.add_argument("--t", type=int, default=None, help="frames per snapshot")
    parser.add_argument("--k", type=int, default=None, help="local snapshot count")
    parser.add_argument("--tau", type=float, default=None,
                        help="hit confidence threshold (default 0.70)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--out", default="runs/out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snapscore",
        description="Early difficulty assessment pipeline and earliness-stability metrics.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset manifest")
    _add_common(p)
    p.add_argument("--n-videos", type=int, default=100)
    p.add_argument("--cue-width", type=float, default=3.0)
    p.add_argument("--amp", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--cue-density", type=float, default=0.4,
                   help="fraction of cue-segment frames that show the cue")
    p.add_argument("--rater-flip", type=float, default=0.1)
    p.add_argument("--balanced", action="store_true")
    p.add_argument("--d", type=int, default=64)

    p = sub.add_parser("split", help="stratified train/val/test split for one scale")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")

    p = sub.add_parser("train", help="train a model variant")
    _add_common(p)
    p.add_argument("--manifest", default=None,
                   help="dataset manifest (JSONL); synthesized when omitted")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--n-videos", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--splits", default=None,
                   help="splits.json from training (recomputed from --seed when omitted)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("metrics", help="compute the metric suite from a stream file")
    _add_common(p)
    p.add_argument("--streams", required=True, help="prediction stream file (JSONL)")
    p.add_argument("--w-max", type=int, default=18)

    p = sub.add_parser("ablate", help="sweep one dimension across values")
    _add_common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--dimension", required=True, choices=("t", "k", "sca"))
    p.add_argument("--values", required=True,
                   help="comma-separated values, e.g. 4,8,16 or on,off")
    p.add_argument("--seeds", default=None, help="comma-separated seeds")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--n-videos", type=int, default=None)

    p = sub.add_parser("report", help="combine finished runs into one table")
    p.add_argument("runs", nargs="+", help="run directories (each with result.json)")
    p.add_argument("--out", default="runs/combined.csv")
    p.add_argument("--plots", action="store_true",
                   help="also render ESV curve plots (needs matplotlib)")
    return parser


def cmd_synth(args) -> int:
    records = synth_dataset(
        num_videos=args.n_videos, seed=args.seed, cue_width=args.cue_width,
        cue_amplitude=args.amp, noise_scale=args.noise,
        cue_density=args.cue_density, rater_flip=args.rater_flip,
        balanced=args.balanced, d=args.d)
    out = Path(args.out)
    path = out if out.suffix == ".jsonl" else out / "dataset.jsonl"
    write_manifest(records, path)
    print(f"wrote {len(records)} video records to {path}")
    return EXIT_OK


def cmd_split(args) -> int:
    records = read_manifest(args.manifest)
    dataset = build_scale_dataset(records, args.scale, split_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "splits.json"
    path.write_text(json.dumps(dataset.splits, indent=2))
    counts = {name: len(ids) for name, ids in dataset.splits.items()}
    print(f"scale {args.scale}: splits {counts} -> {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .datasets import TrainData
    from .model import SnapshotModel

    manifest = _build_manifest(args)
    paths = manifest.paths()
    paths["out"].mkdir(parents=True, exist_ok=True)
    records = (read_manifest(args.manifest) if args.manifest
               else synth_dataset(
                   num_videos=manifest.data.num_videos, seed=manifest.data.dataset_seed,
                   cue_width=manifest.data.cue_width,
                   cue_amplitude=manifest.data.cue_amplitude,
                   noise_scale=manifest.data.noise_scale,
                   cue_density=manifest.data.cue_density,
                   rater_flip=manifest.data.rater_flip, d=manifest.data.d))
    if not args.manifest:
        write_manifest(records, paths["dataset"])
    dataset = build_scale_dataset(records, args.scale, split_seed=args.seed,
                                  w_max=manifest.model.w_max)
    paths["splits"].write_text(json.dumps(dataset.splits, indent=2))
    paths["manifest"].write_text(manifest.to_json())
    model = SnapshotModel(manifest.model, seed=args.seed)
    data = TrainData(dataset, manifest.model, seed=args.seed,
                     feature_jitter=manifest.train.feature_jitter)
    result = train(model, data, manifest.train)
    write_train_log(result.log, paths["train_log"])
    save_checkpoint(model, paths["checkpoint_final"])
    result.restore_best()
    save_checkpoint(model, paths["checkpoint"])
    last = result.log[-1]
    print(f"trained {manifest.variant} on {args.scale}: "
          f"final loss {last['train_loss']:.4f}, best epoch {result.best_epoch} "
          f"-> {paths['checkpoint']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    tau = args.tau if args.tau is not None else 0.70
    records = read_manifest(args.manifest)
    model = load_checkpoint(args.checkpoint)
    dataset = build_scale_dataset(records, args.scale, split_seed=args.seed,
                                  w_max=model.config.w_max)
    if args.splits:
        dataset.splits = json.loads(Path(args.splits).read_text())
    streams = predict_streams(model, dataset, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_streams(streams, out / "streams.jsonl")
    report = evaluate(streams, tau=tau)
    report.write_csv(out / "report.csv", extra={"scale": args.scale})
    report.write_per_video_csv(out / "per_video_es.csv")
    write_prediction_grid(streams, tau, out / "prediction_grid.csv")
    write_esv_curve(streams, tau, out / "esv_curve.csv")
    print(json.dumps(report.summary(), indent=2))
    return EXIT_OK


def cmd_metrics(args) -> int:
    tau = args.tau if args.tau is not None else 0.70
    streams = read_streams(args.streams, w_max=args.w_max)
    report = evaluate(streams, tau=tau)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    report.write_per_video_csv(out / "per_video_es.csv")
    print(json.dumps(report.summary(), indent=2))
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = _build_manifest(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds else None)
    rows = ablate(args.dimension, values, base, seeds=seeds)
    for row in rows:
        print(f"{args.dimension}={row['value']} seed={row['seed']}: "
              f"meanES={row['mean_es']:.4f} top1={row['top1']:.2f}")
    print(f"sweep table -> {Path(base.out_dir) / 'sweep.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    import csv

    rows = []
    for run in args.runs:
        result = Path(run) / "result.json"
        if not result.exists():
            raise DataError(f"{run}: no result.json (incomplete run?)")
        rows.append(json.loads(result.read_text()))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fields = sorted({k for row in rows for k in row})
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    print(f"combined {len(rows)} runs -> {out}")
    if args.plots:
        _plot_esv_curves(args.runs, out.with_suffix(".esv.png"))
    return EXIT_OK


def _plot_esv_curves(runs: list[str], path: Path) -> None:
    import csv

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    for run in runs:
        curve = Path(run) / "esv_curve.csv"
        if not curve.exists():
            continue
        with open(curve) as fh:
            data = list(csv.DictReader(fh))
        ax.plot([int(r["n"]) for r in data], [float(r["esv"]) for r in data],
                marker="o", label=Path(run).name)
    ax.set_xlabel("stability horizon n")
    ax.set_ylabel("ESV(n)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    print(f"esv curves -> {path}")


_HANDLERS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "metrics": cmd_metrics,
    "ablate": cmd_ablate,
    "report": cmd_report,
}

_DATA_ERRORS = (DataError, InsufficientFramesError, FileNotFoundError,
                IsADirectoryError, KeyError, IndexError)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.verb](args)
    except StageError as err:
        cause = err.cause
        print(f"error: {err}", file=sys.stderr)
        if isinstance(cause, NumericalError):
            return EXIT_NUMERICAL
        if isinstance(cause, _DATA_ERRORS):
            return EXIT_DATA
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _DATA_ERRORS as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError) as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
