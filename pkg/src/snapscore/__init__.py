"""snapscore: early video-level difficulty assessment from temporal snapshots.

A video prefix is summarized by one global and several local frame
snapshots, encoded by small transformers, optionally fused by
inter-snapshot attention, and classified per observation window.  The
package ships the full pipeline (sampling, synthetic features, model,
training, harness) plus an evaluation suite centered on earliness-stability
scores that reward correct predictions made early and held stably.
"""

from .features import (FeatureVolume, SyntheticBackbone, SyntheticVideoSpec,
                       class_directions, extract_features, pool_and_flatten,
                       synth_features)
from .metrics import (EvalReport, PredictionStream, es, esv, evaluate, hit,
                      macro_f1, mean_es, qwk, read_streams, stability,
                      stream_hits, top1_accuracy, write_streams)
from .model import (ModelConfig, SnapshotLogits, SnapshotModel,
                    aggregate_scores, load_checkpoint, save_checkpoint)
from .sampling import (InsufficientFramesError, ObservationWindow,
                       SnapshotPlan, build_plan, partition_local,
                       sample_indices, window_frame_count)
from .training import (AdamW, NumericalError, TrainConfig, TrainResult,
                       cross_entropy, lr_at_epoch, sample_training_window,
                       train)

__version__ = "0.1.0"

__all__ = [
    "FeatureVolume", "SyntheticBackbone", "SyntheticVideoSpec",
    "class_directions", "extract_features", "pool_and_flatten", "synth_features",
    "EvalReport", "PredictionStream", "es", "esv", "evaluate", "hit",
    "macro_f1", "mean_es", "qwk", "read_streams", "stability", "stream_hits",
    "top1_accuracy", "write_streams",
    "ModelConfig", "SnapshotLogits", "SnapshotModel", "aggregate_scores",
    "load_checkpoint", "save_checkpoint",
    "InsufficientFramesError", "ObservationWindow", "SnapshotPlan",
    "build_plan", "partition_local", "sample_indices", "window_frame_count",
    "AdamW", "NumericalError", "TrainConfig", "TrainResult", "cross_entropy",
    "lr_at_epoch", "sample_training_window", "train",
    "__version__",
]
