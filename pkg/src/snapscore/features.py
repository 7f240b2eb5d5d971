"""Feature extraction contract and the synthetic planted-cue generator.

The model consumes per-snapshot token grids of shape ``(t, h_p, w_p, d)``.
Real deployments would fill these from a pretrained image backbone followed
by spatial average pooling; at desk scale a synthetic generator plants a
class-specific feature direction inside a limited temporal segment of each
video ("cue") and surrounds it with Gaussian noise.  Everything here is a
pure function of its inputs plus an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "FeatureVolume",
    "SyntheticVideoSpec",
    "pool_and_flatten",
    "class_directions",
    "synth_features",
    "extract_features",
    "SyntheticBackbone",
]

# Seed material for the per-class direction basis; fixed so directions are a
# deterministic function of (num_classes, dim) alone.
_DIRECTION_SEED = 0x5EED


@dataclass(frozen=True)
class FeatureVolume:
    """Token grid for one snapshot: ``tokens`` has shape ``(t, h_p, w_p, d)``."""

    tokens: np.ndarray

    def __post_init__(self) -> None:
        if self.tokens.ndim != 4:
            raise ValueError(f"tokens must be 4-d (t, h_p, w_p, d), got {self.tokens.shape}")
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("tokens contain non-finite entries")

    @property
    def flat(self) -> np.ndarray:
        """Flattened view ``(t * h_p * w_p, d)``; reshaping back round-trips exactly."""
        t, hp, wp, d = self.tokens.shape
        return self.tokens.reshape(t * hp * wp, d)


def pool_and_flatten(raw: np.ndarray, h_p: int = 4, w_p: int = 4) -> FeatureVolume:
    """Average-pool the spatial axes of ``raw`` ``(t, h, w, d)`` down to ``(h_p, w_p)``.

    Each output cell is the mean of its spatial bin, so the global mean of
    the volume is preserved.  The spatial dimensions must divide evenly into
    the requested bins.
    """
    if raw.ndim != 4:
        raise ValueError(f"raw features must be 4-d (t, h, w, d), got shape {raw.shape}")
    t, h, w, d = raw.shape
    if h % h_p != 0 or w % w_p != 0:
        raise ValueError(
            f"spatial dims ({h}, {w}) must split evenly into ({h_p}, {w_p}) bins; "
            f"need h % {h_p} == 0 and w % {w_p} == 0"
        )
    binned = raw.reshape(t, h_p, h // h_p, w_p, w // w_p, d)
    return FeatureVolume(binned.mean(axis=(2, 4)))


def class_directions(num_classes: int, dim: int) -> np.ndarray:
    """Fixed unit directions ``e_c`` in R^dim, one row per class.

    Rows are pairwise orthonormal whenever ``dim >= num_classes``; for smaller
    ``dim`` they are unit-norm but necessarily correlated.
    """
    if num_classes < 1 or dim < 1:
        raise ValueError("num_classes and dim must be positive")
    rng = np.random.default_rng([_DIRECTION_SEED, num_classes, dim])
    raw = rng.normal(size=(dim, max(num_classes, 1)))
    q, r = np.linalg.qr(raw)
    # Sign-fix so the basis does not depend on LAPACK sign conventions.
    q = q * np.sign(np.diag(r))
    if dim >= num_classes:
        return q[:, :num_classes].T.copy()
    vecs = rng.normal(size=(num_classes, dim))
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


@dataclass(frozen=True)
class SyntheticVideoSpec:
    """Generation recipe for one synthetic video.

    ``cue_segments`` lists minute ranges ``(start, end)`` during which the
    class direction ``e_{class_label}`` (scaled by ``cue_amplitude``) is added
    to every token; outside them frames are pure noise.  ``cue_density`` is
    the fraction of frames inside a cue segment that actually show the cue
    (the finding is only visible when the camera happens to be on it); which
    frames show it is a deterministic function of the seeds.  ``seed`` is the
    video-level generator seed recorded in the dataset manifest.
    """

    video_id: str
    class_label: int
    num_classes: int
    length_minutes: float
    cue_segments: tuple[tuple[float, float], ...]
    cue_amplitude: float = 2.0
    noise_scale: float = 1.0
    cue_density: float = 1.0
    seed: int = 0
    fps: int = 1
    h_p: int = 4
    w_p: int = 4
    d: int = 64

    def __post_init__(self) -> None:
        if not 0 <= self.class_label < self.num_classes:
            raise ValueError(
                f"class_label {self.class_label} outside [0, {self.num_classes})"
            )
        if self.cue_amplitude < 0:
            raise ValueError("cue_amplitude must be >= 0")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if not 0.0 <= self.cue_density <= 1.0:
            raise ValueError("cue_density must lie in [0, 1]")
        for start, end in self.cue_segments:
            if not (0 <= start <= end <= self.length_minutes):
                raise ValueError(
                    f"cue segment ({start}, {end}) outside [0, {self.length_minutes}]"
                )

    @property
    def total_frames(self) -> int:
        return int(self.length_minutes * 60 * self.fps)

    def with_label(self, class_label: int, num_classes: int) -> "SyntheticVideoSpec":
        return replace(self, class_label=class_label, num_classes=num_classes)


def _frame_in_cue(spec: SyntheticVideoSpec, frame_index: int) -> bool:
    minute = frame_index / (60.0 * spec.fps)
    return any(start <= minute < end for start, end in spec.cue_segments)


def synth_features(
    spec: SyntheticVideoSpec, frame_index: int, seed: int = 0
) -> np.ndarray:
    """Token grid ``(h_p, w_p, d)`` for one frame of a synthetic video.

    Base tokens are zero-mean Gaussian noise with ``spec.noise_scale``; frames
    whose minute lies inside a cue segment — and, for ``cue_density < 1``, on
    which the cue is actually in view — additionally carry
    ``cue_amplitude * e_c`` in every cell.  The output is a deterministic
    function of ``(spec, frame_index, seed)``.
    """
    if not 0 <= frame_index < spec.total_frames:
        raise IndexError(
            f"frame {frame_index} outside video '{spec.video_id}' "
            f"[0, {spec.total_frames})"
        )
    rng = np.random.default_rng([seed, spec.seed, frame_index])
    grid = rng.normal(0.0, 1.0, size=(spec.h_p, spec.w_p, spec.d)) * spec.noise_scale
    if spec.cue_amplitude > 0 and _frame_in_cue(spec, frame_index):
        visible = spec.cue_density >= 1.0 or rng.random() < spec.cue_density
        if visible:
            e_c = class_directions(spec.num_classes, spec.d)[spec.class_label]
            grid = grid + spec.cue_amplitude * e_c
    return grid


def extract_features(
    frame_indices: np.ndarray, spec: SyntheticVideoSpec, seed: int = 0
) -> FeatureVolume:
    """Token grids for a frame selection: shape ``(len(frame_indices), h_p, w_p, d)``.

    This is the bundled implementation of the backbone contract (one token
    grid per selected frame); any callable with the same signature can stand
    in for it.
    """
    grids = np.stack([synth_features(spec, int(i), seed) for i in np.asarray(frame_indices)])
    return FeatureVolume(grids)


@dataclass
class SyntheticBackbone:
    """Feature source over a collection of synthetic videos.

    Maps ``(video_id, frame_indices)`` to a :class:`FeatureVolume`; unknown
    ids raise ``KeyError``.  Stateless apart from the registry, so safe to
    share across workers.
    """

    videos: dict[str, SyntheticVideoSpec] = field(default_factory=dict)
    seed: int = 0

    def extract(self, video_id: str, frame_indices: np.ndarray) -> FeatureVolume:
        if video_id not in self.videos:
            raise KeyError(f"unknown video id {video_id!r}")
        return extract_features(frame_indices, self.videos[video_id], self.seed)
