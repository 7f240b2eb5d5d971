"""Walkthrough: turning an observed video prefix into snapshot frame plans.

A model never sees whole videos. For each observation window (the first w
minutes) it gets one *global* snapshot sampled across the whole prefix and k
*local* snapshots sampled inside contiguous, non-overlapping segments.
"""

import numpy as np

from snapscore.sampling import (ObservationWindow, build_plan, partition_local,
                                sample_indices, window_frame_count)

# A 20-minute video at 1 fps observed for 2 minutes -> 120 usable frames.
window = ObservationWindow("demo_video", w=2, total_frames=20 * 60)
print(f"window of {window.w} min -> {window.frame_count} frames")
print("frame count clamps at the video length:",
      window_frame_count(w=30, fps=1, total_frames=20 * 60))

# Partition those frames into k=2 equal segments for the local snapshots.
bounds = partition_local(window.frame_count, k=2)
print("segment bounds:", bounds)

# Deterministic evaluation sampling: the center-of-bin rule.
print("uniform indices:", sample_indices(0, window.frame_count, t=8))

# Seeded random sampling for training: distinct, sorted, reproducible.
print("random  indices:", sample_indices(0, window.frame_count, t=8,
                                         mode="random", seed=7))

# A full plan bundles the global selection plus one selection per segment.
plan = build_plan(window, t=8, k=2, mode="uniform")
print("\nfull uniform plan")
print("  global:", plan.global_indices)
for i, loc in enumerate(plan.local_indices):
    lo, hi = plan.segment_bounds[i], plan.segment_bounds[i + 1]
    print(f"  local{i} in [{lo}, {hi}):", loc)

# Local selections never cross segment bounds, so they are disjoint.
merged = np.concatenate(plan.local_indices)
assert len(set(merged.tolist())) == len(merged)
print("\nlocal selections are disjoint across segments: OK")
