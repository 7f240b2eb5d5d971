"""Frame-index sampling for global and local temporal snapshots.

An observed video prefix of ``F_w`` frames is summarized by one *global*
snapshot (``t`` frames drawn over the whole prefix) and ``k`` *local*
snapshots (``t`` frames each, drawn inside ``k`` contiguous, non-overlapping
segments that partition the prefix).  All functions here are pure: random
mode instantiates its own seeded generator per call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InsufficientFramesError",
    "ObservationWindow",
    "SnapshotPlan",
    "window_frame_count",
    "partition_local",
    "sample_indices",
    "build_plan",
]


class InsufficientFramesError(ValueError):
    """Raised when a frame range is too short for the requested snapshot budget."""


def window_frame_count(w: int, fps: int, total_frames: int) -> int:
    """Number of frames in a ``w``-minute observation window.

    Returns ``min(w * 60 * fps, total_frames)``: the window is clamped by the
    video length so short videos never report frames they do not have.
    """
    if w < 1 or fps < 1 or total_frames < 1:
        raise ValueError(
            f"w, fps and total_frames must be positive, got w={w} fps={fps} "
            f"total_frames={total_frames}"
        )
    return min(int(w) * 60 * int(fps), int(total_frames))


@dataclass(frozen=True)
class ObservationWindow:
    """The first ``w`` minutes of a video, as a frame range ``[0, frame_count)``."""

    video_id: str
    w: int
    total_frames: int
    fps: int = 1

    def __post_init__(self) -> None:
        if self.w < 1:
            raise ValueError(f"window size must be >= 1 minute, got {self.w}")
        if self.fps < 1:
            raise ValueError(f"fps must be >= 1, got {self.fps}")
        if self.total_frames < 1:
            raise ValueError(f"total_frames must be >= 1, got {self.total_frames}")

    @property
    def frame_count(self) -> int:
        return window_frame_count(self.w, self.fps, self.total_frames)


def partition_local(
    f_w: int,
    k: int,
    min_length: int = 1,
    video_id: str | None = None,
) -> np.ndarray:
    """Partition ``[0, f_w)`` into ``k`` contiguous segments.

    Boundary ``i`` is ``floor(i * f_w / k)``, so segment lengths differ by at
    most one frame.  ``min_length`` is the per-segment frame budget; a window
    too short to give every segment that many frames raises
    :class:`InsufficientFramesError`.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if f_w < k * min_length:
        where = f" in window '{video_id}'" if video_id else ""
        raise InsufficientFramesError(
            f"cannot cut {f_w} frames{where} into {k} segments of >= "
            f"{min_length} frames each"
        )
    return np.array([(i * f_w) // k for i in range(k + 1)], dtype=np.int64)


def sample_indices(
    range_start: int,
    range_end: int,
    t: int,
    mode: str = "uniform",
    seed: int | np.random.Generator | None = None,
) -> np.ndarray:
    """Pick ``t`` sorted frame indices from ``[range_start, range_end)``.

    ``mode="uniform"`` uses the center-of-bin rule
    ``range_start + floor((j + 0.5) * L / t)`` which is deterministic and
    avoids bias toward range edges.  ``mode="random"`` draws ``t`` distinct
    indices without replacement from a generator seeded per call.
    """
    length = range_end - range_start
    if length < t:
        raise InsufficientFramesError(
            f"range [{range_start}, {range_end}) has {length} frames, need {t}"
        )
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if mode == "uniform":
        j = np.arange(t, dtype=np.int64)
        return range_start + ((2 * j + 1) * length) // (2 * t)
    if mode == "random":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        picks = rng.choice(length, size=t, replace=False)
        picks.sort()
        return range_start + picks.astype(np.int64)
    raise ValueError(f"mode must be 'uniform' or 'random', got {mode!r}")


@dataclass(frozen=True)
class SnapshotPlan:
    """Frame selections for one global and ``k`` local snapshots."""

    global_indices: np.ndarray
    local_indices: tuple[np.ndarray, ...]
    segment_bounds: np.ndarray
    t: int = field(default=0)

    @property
    def k(self) -> int:
        return len(self.local_indices)

    def validate(self) -> None:
        """Check the structural invariants; raises ``ValueError`` on violation."""
        f_w = int(self.segment_bounds[-1])
        if self.segment_bounds[0] != 0:
            raise ValueError("segment bounds must start at 0")
        if np.any(np.diff(self.segment_bounds) <= 0):
            raise ValueError("segment bounds must be strictly increasing")
        for name, idx in [("global", self.global_indices)] + [
            (f"local{i}", loc) for i, loc in enumerate(self.local_indices)
        ]:
            if self.t and len(idx) != self.t:
                raise ValueError(f"{name} snapshot has {len(idx)} indices, expected {self.t}")
            if np.any(np.diff(idx) < 0):
                raise ValueError(f"{name} indices are not sorted")
            if idx.min() < 0 or idx.max() >= f_w:
                raise ValueError(f"{name} indices leave the window [0, {f_w})")
        for i, loc in enumerate(self.local_indices):
            lo, hi = self.segment_bounds[i], self.segment_bounds[i + 1]
            if loc.min() < lo or loc.max() >= hi:
                raise ValueError(f"local{i} indices leave segment [{lo}, {hi})")


def build_plan(
    window: ObservationWindow,
    t: int,
    k: int,
    mode: str = "uniform",
    seed: int | None = None,
) -> SnapshotPlan:
    """Build the full snapshot plan for one observation window.

    The global snapshot samples over the whole window; local snapshot ``i``
    samples inside segment ``i`` of the partition, so local selections are
    disjoint across segments by construction.  The global selection may
    overlap local ones.  Random mode derives one child seed per snapshot so
    the plan is a pure function of ``(window, t, k, seed)``.
    """
    f_w = window.frame_count
    if f_w < t:
        raise InsufficientFramesError(
            f"window '{window.video_id}' has {f_w} frames, need t={t} for the "
            "global snapshot"
        )
    bounds = partition_local(f_w, k, min_length=t, video_id=window.video_id)
    if mode == "random":
        seeds = np.random.SeedSequence(seed).spawn(k + 1)
        gens: list[int | np.random.Generator | None] = [np.random.default_rng(s) for s in seeds]
    else:
        gens = [None] * (k + 1)
    global_idx = sample_indices(0, f_w, t, mode, gens[0])
    local_idx = tuple(
        sample_indices(int(bounds[i]), int(bounds[i + 1]), t, mode, gens[i + 1])
        for i in range(k)
    )
    plan = SnapshotPlan(global_idx, local_idx, bounds, t=t)
    plan.validate()
    return plan
