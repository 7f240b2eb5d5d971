"""Synthetic video corpus: label scales, rater simulation, splits, batching.

Each synthetic video gets a latent difficulty, per-scale ordinal labels
drawn from fixed class quotas over that latent, three simulated raters whose
labels occasionally flip to an adjacent class, and a single planted cue
segment whose feature direction encodes the true class.  A dataset manifest
is one JSON record per video (JSONL).

The middle scale mirrors a grading scheme where several raw grades are too
rare to split; those videos carry a null label for that scale and are
excluded from its splits, which is why its split sizes total fewer videos
than the corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import no_grad
from .errors import DataError
from .features import SyntheticBackbone, SyntheticVideoSpec
from .metrics import PredictionStream
from .model import ModelConfig, SnapshotModel
from .sampling import ObservationWindow, build_plan
from .training import sample_training_window

__all__ = [
    "ScaleSpec", "SCALES", "majority_vote", "stratified_split",
    "VideoRecord", "synth_dataset", "write_manifest", "read_manifest",
    "ScaleDataset", "build_scale_dataset", "TrainData", "predict_streams",
]


def _largest_remainder(fractions: Sequence[float], total: int) -> list[int]:
    """Round ``fractions * total`` to integers summing exactly to ``total``."""
    raw = np.asarray(fractions, dtype=np.float64) * total
    base = np.floor(raw).astype(int)
    short = total - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    for i in order[:short]:
        base[i] += 1
    return base.tolist()


@dataclass(frozen=True)
class ScaleSpec:
    """One ordinal difficulty scale: class count, priors and split sizes."""

    name: str
    num_classes: int
    split_sizes: tuple[int, int, int]
    class_priors: tuple[float, ...]
    excluded_fraction: float = 0.0

    def __post_init__(self) -> None:
        if len(self.class_priors) != self.num_classes:
            raise ValueError(f"scale {self.name}: need {self.num_classes} priors")
        if abs(sum(self.class_priors) - 1.0) > 1e-9:
            raise ValueError(f"scale {self.name}: priors must sum to 1")

    def usable_count(self, num_videos: int) -> int:
        return num_videos - int(round(self.excluded_fraction * num_videos))

    def split_sizes_for(self, n_usable: int) -> tuple[int, int, int]:
        """The canonical sizes when they fit; proportional rounding otherwise."""
        if n_usable == sum(self.split_sizes):
            return self.split_sizes
        fracs = np.asarray(self.split_sizes) / sum(self.split_sizes)
        return tuple(_largest_remainder(fracs, n_usable))

    def class_quotas(self, n_usable: int, balanced: bool = False) -> list[int]:
        priors = ([1.0 / self.num_classes] * self.num_classes
                  if balanced else self.class_priors)
        return _largest_remainder(priors, n_usable)


SCALES: dict[str, ScaleSpec] = {
    "pgs": ScaleSpec("pgs", 5, (52, 16, 32), (0.18, 0.26, 0.24, 0.18, 0.14)),
    "s": ScaleSpec("s", 3, (48, 15, 30), (0.43, 0.30, 0.27), excluded_fraction=0.07),
    "n": ScaleSpec("n", 4, (53, 17, 30), (0.30, 0.32, 0.22, 0.16)),
}


def majority_vote(rater_labels: Sequence[int], num_classes: int) -> int:
    """Consensus of exactly three rater labels.

    Returns the modal label; a three-way tie falls back to the median label,
    which is deterministic and respects the ordinal structure.
    """
    labels = list(rater_labels)
    if len(labels) != 3:
        raise ValueError(f"expected 3 rater labels, got {len(labels)}")
    for lab in labels:
        if not 0 <= lab < num_classes:
            raise ValueError(f"label {lab} outside [0, {num_classes})")
    counts = np.bincount(labels, minlength=num_classes)
    if counts.max() >= 2:
        return int(np.argmax(counts))
    return int(np.sort(labels)[1])


def stratified_split(
    labels: Sequence[int], split_sizes: Sequence[int], seed: int = 0
) -> tuple[np.ndarray, ...]:
    """Split indices into groups of exact sizes with per-class proportionality.

    Every class's allocation to each split is the proportional share rounded
    up or down, so it deviates from proportionality by strictly less than one
    video.  Splits are disjoint, exhaustive and a pure function of
    ``(labels, split_sizes, seed)``.
    """
    labels = np.asarray(labels, dtype=int)
    sizes = [int(s) for s in split_sizes]
    n = len(labels)
    if sum(sizes) != n:
        raise ValueError(f"split sizes {sizes} sum to {sum(sizes)}, have {n} videos")
    if min(sizes) < 0:
        raise ValueError(f"split sizes must be non-negative, got {sizes}")
    classes = np.unique(labels)
    quota = {c: labels.tolist().count(c) * np.asarray(sizes) / n for c in classes}
    alloc = {c: np.floor(quota[c]).astype(int) for c in classes}
    units = {c: int((labels == c).sum()) - int(alloc[c].sum()) for c in classes}
    capacity = np.asarray(sizes) - np.sum([alloc[c] for c in classes], axis=0)
    # Distributing the leftover units is a transportation rounding: each class
    # may add at most one video per split (so every count stays within one of
    # its proportional share) while exactly filling the remaining capacities.
    # A saturating flow on classes x splits always exists and solves it.
    total_units = sum(units.values())
    if total_units:
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import maximum_flow

        n_cls, n_cols = len(classes), len(sizes)
        source, sink = 0, 1 + n_cls + n_cols
        rows, cols, caps = [], [], []
        for i, c in enumerate(classes):
            rows.append(source), cols.append(1 + i), caps.append(units[c])
            for j in range(n_cols):
                rows.append(1 + i), cols.append(1 + n_cls + j), caps.append(1)
        for j in range(n_cols):
            rows.append(1 + n_cls + j), cols.append(sink), caps.append(int(capacity[j]))
        graph = csr_matrix((caps, (rows, cols)), shape=(sink + 1, sink + 1))
        flow = maximum_flow(graph, source, sink)
        assert flow.flow_value == total_units, "transportation rounding infeasible"
        residual = flow.flow.toarray()
        for i, c in enumerate(classes):
            for j in range(n_cols):
                alloc[c][j] += max(0, int(residual[1 + i, 1 + n_cls + j]))
    rng = np.random.default_rng([seed, 0x5B117])
    out: list[list[int]] = [[] for _ in sizes]
    for c in classes:
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        start = 0
        for j, count in enumerate(alloc[c]):
            out[j].extend(members[start:start + count].tolist())
            start += count
    return tuple(np.sort(np.asarray(part, dtype=int)) for part in out)


@dataclass
class VideoRecord:
    """One manifest entry: generation recipe plus per-scale labels.

    ``labels[scale]`` is ``None`` for videos excluded from that scale,
    otherwise ``{"true": int, "raters": [int, int, int], "label": int}``
    where ``label`` is the majority vote.
    """

    video_id: str
    length_minutes: float
    cue_segments: tuple[tuple[float, float], ...]
    seed: int
    cue_amplitude: float = 2.0
    noise_scale: float = 1.0
    cue_density: float = 0.4
    fps: int = 1
    h_p: int = 4
    w_p: int = 4
    d: int = 64
    labels: dict[str, dict | None] = field(default_factory=dict)

    def spec_for(self, scale: ScaleSpec) -> SyntheticVideoSpec:
        info = self.labels.get(scale.name)
        if info is None:
            raise ValueError(f"video {self.video_id} has no {scale.name} label")
        return SyntheticVideoSpec(
            video_id=self.video_id,
            class_label=info["true"],
            num_classes=scale.num_classes,
            length_minutes=self.length_minutes,
            cue_segments=self.cue_segments,
            cue_amplitude=self.cue_amplitude,
            noise_scale=self.noise_scale,
            cue_density=self.cue_density,
            seed=self.seed,
            fps=self.fps,
            h_p=self.h_p,
            w_p=self.w_p,
            d=self.d,
        )


def _rater_labels(true_label: int, num_classes: int, flip_prob: float,
                  rng: np.random.Generator) -> list[int]:
    """Three noisy rater labels: each flips to an adjacent class with ``flip_prob``."""
    out = []
    for _ in range(3):
        label = true_label
        if rng.random() < flip_prob:
            step = -1 if rng.random() < 0.5 else 1
            label = int(np.clip(true_label + step, 0, num_classes - 1))
            if label == true_label:  # edge class: flip inward instead
                label = int(np.clip(true_label - step, 0, num_classes - 1))
        out.append(label)
    return out


def synth_dataset(
    num_videos: int = 100,
    seed: int = 0,
    scales: Iterable[str] = ("pgs", "s", "n"),
    cue_width: float = 3.0,
    cue_amplitude: float = 2.0,
    noise_scale: float = 1.0,
    cue_density: float = 0.4,
    rater_flip: float = 0.1,
    w_max: int = 18,
    min_length: int = 18,
    max_length: int = 24,
    d: int = 64,
    h_p: int = 4,
    w_p: int = 4,
    fps: int = 1,
    balanced: bool = False,
) -> list[VideoRecord]:
    """Generate the manifest for a planted-cue corpus.

    Scale labels are quota-assigned over a shared latent difficulty (with
    per-scale jitter) so the three scales correlate the way independent
    grading schemes of one phenomenon would.  The cue segment starts at a
    uniformly random integer minute early enough to be observable within the
    ``w_max``-minute assessment horizon.
    """
    if num_videos < 4:
        raise ValueError("need at least 4 videos")
    if min_length < w_max:
        raise ValueError(f"videos must span the horizon: min_length >= {w_max}")
    rng = np.random.default_rng([seed, 0xDA7A])
    latent = rng.uniform(0.0, 1.0, num_videos)
    lengths = rng.integers(min_length, max_length + 1, num_videos)
    cue_start_max = int(min(min_length, w_max) - cue_width)
    starts = rng.integers(0, cue_start_max + 1, num_videos)
    video_seeds = rng.integers(0, 2**31 - 1, num_videos)

    records = [
        VideoRecord(
            video_id=f"v{i:03d}",
            length_minutes=float(lengths[i]),
            cue_segments=((float(starts[i]), float(starts[i] + cue_width)),),
            seed=int(video_seeds[i]),
            cue_amplitude=cue_amplitude,
            noise_scale=noise_scale,
            cue_density=cue_density,
            fps=fps,
            h_p=h_p,
            w_p=w_p,
            d=d,
        )
        for i in range(num_videos)
    ]

    for scale_name in scales:
        scale = SCALES[scale_name]
        usable = scale.usable_count(num_videos)
        excluded = rng.choice(num_videos, num_videos - usable, replace=False)
        excluded_set = set(int(i) for i in excluded)
        kept = [i for i in range(num_videos) if i not in excluded_set]
        jitter = rng.normal(0.0, 0.15, len(kept))
        order = [kept[i] for i in np.argsort(latent[kept] + jitter, kind="stable")]
        quotas = scale.class_quotas(usable, balanced=balanced)
        true_labels = {}
        cursor = 0
        for cls, quota in enumerate(quotas):
            for vid in order[cursor:cursor + quota]:
                true_labels[vid] = cls
            cursor += quota
        for i in range(num_videos):
            if i in excluded_set:
                records[i].labels[scale_name] = None
                continue
            raters = _rater_labels(true_labels[i], scale.num_classes, rater_flip, rng)
            records[i].labels[scale_name] = {
                "true": true_labels[i],
                "raters": raters,
                "label": majority_vote(raters, scale.num_classes),
            }
    return records


def write_manifest(records: list[VideoRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({
                "video_id": r.video_id,
                "length_minutes": r.length_minutes,
                "cue_segments": [list(seg) for seg in r.cue_segments],
                "seed": r.seed,
                "cue_amplitude": r.cue_amplitude,
                "noise_scale": r.noise_scale,
                "cue_density": r.cue_density,
                "fps": r.fps,
                "h_p": r.h_p,
                "w_p": r.w_p,
                "d": r.d,
                "labels": r.labels,
            }) + "\n")
    return path


def read_manifest(path: str | Path) -> list[VideoRecord]:
    records = []
    with open(Path(path)) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{line_no}: bad JSON record: {err}") from err
            records.append(VideoRecord(
                video_id=raw["video_id"],
                length_minutes=raw["length_minutes"],
                cue_segments=tuple(tuple(seg) for seg in raw["cue_segments"]),
                seed=raw["seed"],
                cue_amplitude=raw["cue_amplitude"],
                noise_scale=raw["noise_scale"],
                cue_density=raw.get("cue_density", 1.0),
                fps=raw["fps"],
                h_p=raw["h_p"],
                w_p=raw["w_p"],
                d=raw["d"],
                labels=raw["labels"],
            ))
    return records


@dataclass
class ScaleDataset:
    """One scale's view of the corpus: specs, voted labels, splits, backbone."""

    scale: ScaleSpec
    records: list[VideoRecord]
    specs: dict[str, SyntheticVideoSpec]
    voted: dict[str, int]
    splits: dict[str, list[str]]
    backbone: SyntheticBackbone
    w_max: int = 18

    def videos(self, split: str) -> list[str]:
        if split not in self.splits:
            raise KeyError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return self.splits[split]


def build_scale_dataset(
    records: list[VideoRecord],
    scale_name: str,
    split_seed: int = 0,
    w_max: int = 18,
    feature_seed: int = 0,
) -> ScaleDataset:
    """Assemble the usable videos of one scale and split them stratified."""
    scale = SCALES[scale_name]
    usable = [r for r in records if r.labels.get(scale_name) is not None]
    if not usable:
        raise ValueError(f"no videos labelled for scale {scale_name!r}")
    specs = {r.video_id: r.spec_for(scale) for r in usable}
    voted = {r.video_id: int(r.labels[scale_name]["label"]) for r in usable}
    labels = [voted[r.video_id] for r in usable]
    sizes = scale.split_sizes_for(len(usable))
    train_idx, val_idx, test_idx = stratified_split(labels, sizes, seed=split_seed)
    ids = [r.video_id for r in usable]
    splits = {
        "train": [ids[i] for i in train_idx],
        "val": [ids[i] for i in val_idx],
        "test": [ids[i] for i in test_idx],
    }
    backbone = SyntheticBackbone(specs, seed=feature_seed)
    return ScaleDataset(scale, usable, specs, voted, splits, backbone, w_max=w_max)


def _snapshot_batch(
    dataset: ScaleDataset,
    config: ModelConfig,
    video_ids: Sequence[str],
    ws: Sequence[int],
    mode: str,
    plan_seeds: Sequence[int] | None = None,
):
    """Extract model-ready token arrays for a batch of (video, window) pairs."""
    globals_, locals_ = [], [[] for _ in range(config.k)]
    use_locals = config.variant != "g"
    for i, (vid, w) in enumerate(zip(video_ids, ws)):
        spec = dataset.specs[vid]
        window = ObservationWindow(vid, int(w), spec.total_frames, fps=spec.fps)
        plan = build_plan(window, config.t, config.k, mode=mode,
                          seed=None if plan_seeds is None else int(plan_seeds[i]))
        globals_.append(dataset.backbone.extract(vid, plan.global_indices).flat)
        if use_locals:
            for slot in range(config.k):
                locals_[slot].append(
                    dataset.backbone.extract(vid, plan.local_indices[slot]).flat)
    global_tokens = np.stack(globals_)
    local_tokens = [np.stack(slot) for slot in locals_] if use_locals else None
    return global_tokens, local_tokens


class TrainData:
    """Adapter between a :class:`ScaleDataset` and the training loop.

    Batches are a pure function of ``(dataset, model config, seed, epoch)``:
    video order, window draws and frame plans all derive from per-epoch
    seeds.  Training uses random frame sampling; validation streams use
    deterministic uniform sampling.
    """

    def __init__(self, dataset: ScaleDataset, config: ModelConfig,
                 seed: int = 0, feature_jitter: float = 0.0):
        self.dataset = dataset
        self.config = config
        self.seed = seed
        self.feature_jitter = feature_jitter
        if not dataset.videos("train"):
            raise ValueError("dataset has no training videos")
        any_spec = next(iter(dataset.specs.values()))
        got = (any_spec.h_p, any_spec.w_p, any_spec.d)
        want = (config.h_p, config.w_p, config.d_in)
        if got != want:
            raise ValueError(
                f"dataset features have (h_p, w_p, d)={got} but the model "
                f"expects {want}; regenerate the corpus or adjust the config")

    def train_batches(self, epoch: int, batch_size: int):
        rng = np.random.default_rng([self.seed, 0x7121, epoch])
        ids = list(self.dataset.videos("train"))
        order = rng.permutation(len(ids))
        for start in range(0, len(ids), batch_size):
            chunk = [ids[i] for i in order[start:start + batch_size]]
            ws = [
                sample_training_window(
                    self.dataset.specs[vid].length_minutes, self.dataset.w_max, rng)
                for vid in chunk
            ]
            plan_seeds = rng.integers(0, 2**31 - 1, len(chunk))
            global_tokens, local_tokens = _snapshot_batch(
                self.dataset, self.config, chunk, ws, "random", plan_seeds)
            if self.feature_jitter > 0:
                global_tokens = global_tokens + rng.normal(
                    0.0, self.feature_jitter, global_tokens.shape)
                if local_tokens is not None:
                    local_tokens = [
                        lt + rng.normal(0.0, self.feature_jitter, lt.shape)
                        for lt in local_tokens
                    ]
            labels = np.array([self.dataset.voted[vid] for vid in chunk])
            yield global_tokens, local_tokens, np.array(ws), labels

    def val_streams(self, model: SnapshotModel) -> list[PredictionStream]:
        return predict_streams(model, self.dataset, "val")


def predict_streams(
    model: SnapshotModel,
    dataset: ScaleDataset,
    split: str | Sequence[str] = "test",
    capture_attention: bool = False,
    dtype=np.float32,
) -> list[PredictionStream] | tuple[list[PredictionStream], dict]:
    """Deterministic evaluation streams: every window ``1..w_max`` per video.

    All windows of one video run as a single batch with uniform frame
    sampling, so repeated calls on fixed weights are bit-identical.
    Inference runs in ``dtype`` (single precision by default, for speed) and
    the aggregated probabilities are renormalized in float64.  With
    ``capture_attention`` the inter-snapshot attention weights of the first
    video are returned alongside the streams.
    """
    ids = dataset.videos(split) if isinstance(split, str) else list(split)
    fast = model if dtype == np.float64 else model.astype(dtype)
    streams = []
    attention: dict[str, np.ndarray] = {}
    w_all = np.arange(1, dataset.w_max + 1)
    with no_grad():
        for vid in ids:
            global_tokens, local_tokens = _snapshot_batch(
                dataset, model.config, [vid] * len(w_all), w_all, "uniform")
            global_tokens = global_tokens.astype(dtype)
            if local_tokens is not None:
                local_tokens = [lt.astype(dtype) for lt in local_tokens]
            want_attn = capture_attention and not attention
            out = fast.forward(global_tokens, local_tokens, w_all,
                               capture_attention=want_attn)
            if want_attn and out.attention:
                attention = dict(out.attention)
                attention["video_id"] = np.bytes_(vid.encode())
            probs = out.probs_array().astype(np.float64)
            probs /= probs.sum(axis=1, keepdims=True)
            streams.append(PredictionStream(
                vid, probs, dataset.voted[vid],
                w_max=dataset.w_max, scale_id=dataset.scale.name))
    if capture_attention:
        return streams, attention
    return streams
