"""Snapshot classifier: per-snapshot encoders, bottleneck, inter-snapshot
attention, time conditioning and a shared classification head.

Three variants are supported:

* ``g``       — global snapshot only,
* ``gl``      — global plus ``k`` local snapshots, each voting independently,
* ``gl-sca``  — as ``gl``, but local token sets exchange information through
  inter-snapshot attention before classification.

Per-snapshot class scores are turned into probabilities and averaged into a
single prediction.  Because the attention blocks are identity at
initialization, ``gl-sca`` with freshly initialized attention output
projections reproduces ``gl`` exactly at matched weights.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor, concatenate
from .features import FeatureVolume
from .layers import Encoder, Linear, TransformerBlock

__all__ = ["VARIANTS", "ModelConfig", "SnapshotLogits", "SnapshotModel",
           "aggregate_scores", "save_checkpoint", "load_checkpoint"]

VARIANTS = ("g", "gl", "gl-sca")

CHECKPOINT_VERSION = 1

# Probabilities are clamped here before any logarithm.
PROB_FLOOR = 1e-8


def normalize_variant(variant: str) -> str:
    v = variant.strip().lower().replace("_", "-")
    if v not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return v


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``d_in`` is the token width delivered by the feature backbone (64 at desk
    scale; large pretrained backbones use 2048) and ``d_bottleneck`` the width
    after the per-token affine reduction.  ``share_local_encoders`` keeps one
    weight set for all local snapshot slots, which makes the model
    permutation-equivariant in its local inputs; per-slot weights are
    available but void that property.
    """

    variant: str = "gl-sca"
    num_classes: int = 5
    t: int = 8
    k: int = 2
    encoder_layers: int = 4
    encoder_heads: int = 4
    d_in: int = 64
    d_bottleneck: int = 128
    sca_blocks: int = 1
    w_max: int = 18
    h_p: int = 4
    w_p: int = 4
    share_local_encoders: bool = True
    logit_average: bool = False
    sca_on_bottleneck: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if min(self.t, self.encoder_layers, self.encoder_heads, self.w_max,
               self.h_p, self.w_p) < 1:
            raise ValueError("t, encoder_layers, encoder_heads, w_max, h_p, w_p must be >= 1")
        if self.variant != "g" and self.k < 1:
            raise ValueError(f"variant {self.variant} needs k >= 1")
        if self.variant == "gl-sca" and self.sca_blocks < 1:
            raise ValueError("variant gl-sca needs sca_blocks >= 1")
        if self.d_in % self.encoder_heads != 0:
            raise ValueError(f"d_in={self.d_in} not divisible by {self.encoder_heads} heads")
        if self.variant == "gl-sca" and self.sca_width % self.encoder_heads != 0:
            raise ValueError(
                f"inter-snapshot attention width {self.sca_width} not divisible "
                f"by {self.encoder_heads} heads"
            )

    @property
    def tokens_per_snapshot(self) -> int:
        return self.t * self.h_p * self.w_p

    @property
    def sca_width(self) -> int:
        return self.d_bottleneck if self.sca_on_bottleneck else self.d_in

    @property
    def snapshot_names(self) -> tuple[str, ...]:
        if self.variant == "g":
            return ("gs",)
        return ("gs",) + tuple(f"ls{i}" for i in range(self.k))


@dataclass
class SnapshotLogits:
    """Per-snapshot class scores plus the aggregated probability vector."""

    snapshot_names: tuple[str, ...]
    scores: list[Tensor]
    probs: Tensor
    attention: dict[str, np.ndarray] = field(default_factory=dict)

    def scores_array(self) -> np.ndarray:
        return np.stack([s.data for s in self.scores])

    def probs_array(self) -> np.ndarray:
        return self.probs.data


def aggregate_scores(scores: Sequence[Tensor], logit_average: bool = False) -> Tensor:
    """Combine per-snapshot class scores into one probability vector.

    Default: softmax each snapshot's scores, then average the probabilities,
    so every snapshot contributes a bounded vote.  ``logit_average`` instead
    averages raw scores before a single softmax.
    """
    scores = list(scores)
    if not scores:
        raise ValueError("aggregate needs at least one score vector")
    total = scores[0]
    if logit_average:
        for s in scores[1:]:
            total = total + s
        return (total * (1.0 / len(scores))).softmax(axis=-1)
    total = total.softmax(axis=-1)
    for s in scores[1:]:
        total = total + s.softmax(axis=-1)
    return total * (1.0 / len(scores))


class SnapshotModel:
    """The full differentiable pipeline; see module docstring.

    Training mutates parameters under exclusive access; inference with frozen
    weights is safe from concurrent readers.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng([seed, 0xA11])
        n, c = config.tokens_per_snapshot, config.num_classes
        self.encoder_global = Encoder(n, config.d_in, config.encoder_layers,
                                      config.encoder_heads, rng)
        self.encoders_local: list[Encoder] = []
        if config.variant != "g":
            n_local = 1 if config.share_local_encoders else config.k
            self.encoders_local = [
                Encoder(n, config.d_in, config.encoder_layers, config.encoder_heads, rng)
                for _ in range(n_local)
            ]
        self.bottleneck = Linear(config.d_in, config.d_bottleneck, rng)
        self.sca = []
        if config.variant == "gl-sca":
            self.sca = [TransformerBlock(config.sca_width, config.encoder_heads, rng)
                        for _ in range(config.sca_blocks)]
        self.time_w1 = Linear(1, config.d_bottleneck, rng)
        self.time_w2 = Linear(config.d_bottleneck, config.d_bottleneck, rng, zero_init=True)
        self.head = Linear(config.d_bottleneck, c, rng)

    # -- parameter access ------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out = self.encoder_global.params("enc_gs")
        for i, enc in enumerate(self.encoders_local):
            out.update(enc.params(f"enc_ls{i}"))
        out.update(self.bottleneck.params("bottleneck"))
        for i, block in enumerate(self.sca):
            out.update(block.params(f"sca{i}"))
        out.update(self.time_w1.params("time_w1"))
        out.update(self.time_w2.params("time_w2"))
        out.update(self.head.params("head"))
        return out

    def randomize_parameters(self, rng: np.random.Generator, scale: float = 0.1) -> None:
        """Fill every parameter with random values (gradient-check helper).

        Overwrites the structured initialization, including the zero output
        projections, so all gradient paths are exercised.
        """
        for name, p in sorted(self.parameters().items()):
            noise = rng.normal(0.0, scale, size=p.shape)
            p.data = noise + 1.0 if name.endswith("gamma") else noise

    def astype(self, dtype) -> "SnapshotModel":
        """A copy of this model with parameters cast to ``dtype``.

        Single precision roughly halves inference cost; training and gradient
        checks should keep the float64 original.
        """
        clone = SnapshotModel(self.config, seed=0)
        src, dst = self.parameters(), clone.parameters()
        for name, p in dst.items():
            p.data = src[name].data.astype(dtype)
        return clone

    # -- pipeline stages -------------------------------------------------------

    def _local_encoder(self, slot: int) -> Encoder:
        if not self.encoders_local:
            raise ValueError("variant 'g' has no local encoders")
        return self.encoders_local[0 if self.config.share_local_encoders else slot]

    def encode_snapshot(self, tokens, encoder_id: str = "gs") -> Tensor:
        """Refine one snapshot's tokens; ``encoder_id`` is ``"gs"`` or ``"ls<i>"``."""
        x = self._as_tokens(tokens)
        if encoder_id == "gs":
            return self.encoder_global(x)
        if encoder_id.startswith("ls"):
            slot = int(encoder_id[2:] or 0)
            return self._local_encoder(slot)(x)
        raise ValueError(f"unknown encoder id {encoder_id!r}")

    def apply_bottleneck(self, tokens: Tensor) -> Tensor:
        return self.bottleneck(tokens)

    def apply_sca(self, local_tokens: Sequence[Tensor], capture: bool = False
                  ) -> tuple[list[Tensor], dict[str, np.ndarray]]:
        """Inter-snapshot attention across the ``k`` local token sets.

        Token sets are concatenated along the token axis, refined by the
        attention blocks (every output token can depend on tokens of all
        snapshots), and split back.  With ``k == 1`` this degenerates to
        self-attention over the single snapshot.
        """
        local_tokens = list(local_tokens)
        if not local_tokens:
            raise ValueError("inter-snapshot attention needs at least one token set")
        shapes = {t.shape for t in local_tokens}
        if len(shapes) != 1:
            raise ValueError(f"local token sets disagree in shape: {sorted(shapes)}")
        n = local_tokens[0].shape[-2]
        joint = local_tokens[0] if len(local_tokens) == 1 else concatenate(local_tokens, axis=-2)
        attention: dict[str, np.ndarray] = {}
        for i, block in enumerate(self.sca):
            joint, weights = block(joint, capture=capture)
            if capture and weights is not None:
                attention[f"sca_block{i}"] = weights
        if capture:
            attention["token_snapshot_ids"] = np.repeat(
                np.arange(len(local_tokens)), n)
        refined = [joint[:, i * n:(i + 1) * n, :] for i in range(len(local_tokens))]
        return refined, attention

    def time_condition(self, tokens: Tensor, w: np.ndarray | int) -> Tensor:
        """Add a learned embedding of the window fraction ``w / w_max`` to every token."""
        w_arr = np.atleast_1d(np.asarray(w))
        if np.any(w_arr < 1) or np.any(w_arr > self.config.w_max):
            raise ValueError(f"window sizes {w_arr} outside [1, {self.config.w_max}]")
        frac = Tensor((w_arr[:, None] / float(self.config.w_max))
                      .astype(tokens.data.dtype))
        emb = self.time_w2(self.time_w1(frac).gelu())  # (batch, d_bottleneck)
        return tokens + emb.reshape(emb.shape[0], 1, emb.shape[1])

    def classify(self, tokens: Tensor) -> Tensor:
        """Mean-pool tokens and map to class scores; the same head serves all snapshots."""
        return self.head(tokens.mean(axis=-2))

    # -- full forward ------------------------------------------------------------

    def _as_tokens(self, x) -> Tensor:
        if isinstance(x, FeatureVolume):
            x = x.flat[None]
        if isinstance(x, np.ndarray):
            x = Tensor(x)
        n = self.config.tokens_per_snapshot
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[-2] != n:
            raise ValueError(
                f"expected (batch, {n}, width) tokens, got shape {x.shape}"
            )
        return x

    def forward(
        self,
        global_tokens,
        local_tokens: Sequence | None = None,
        w: np.ndarray | int = 1,
        capture_attention: bool = False,
    ) -> SnapshotLogits:
        """Run the pipeline for a batch of observation windows.

        ``global_tokens``: ``(batch, tokens, d_in)``; ``local_tokens``: ``k``
        arrays of the same shape (ignored by variant ``g``); ``w``: per-sample
        window size in minutes.  Returns per-snapshot scores and the
        aggregated probability vector.
        """
        cfg = self.config
        xg = self._as_tokens(global_tokens)
        b = xg.shape[0]
        w_arr = np.broadcast_to(np.atleast_1d(np.asarray(w)), (b,))

        fg = self.bottleneck(self.encoder_global(xg))
        fg = self.time_condition(fg, w_arr)
        scores = [self.classify(fg)]
        attention: dict[str, np.ndarray] = {}

        if cfg.variant != "g":
            if local_tokens is None or len(local_tokens) != cfg.k:
                raise ValueError(
                    f"variant {cfg.variant} needs {cfg.k} local token sets, "
                    f"got {0 if local_tokens is None else len(local_tokens)}"
                )
            encoded = [self.encode_snapshot(self._as_tokens(lt), f"ls{i}")
                       for i, lt in enumerate(local_tokens)]
            if cfg.sca_on_bottleneck:
                locals_ = [self.bottleneck(e) for e in encoded]
                if cfg.variant == "gl-sca":
                    locals_, attention = self.apply_sca(locals_, capture=capture_attention)
            else:
                if cfg.variant == "gl-sca":
                    encoded, attention = self.apply_sca(encoded, capture=capture_attention)
                locals_ = [self.bottleneck(e) for e in encoded]
            for lt in locals_:
                scores.append(self.classify(self.time_condition(lt, w_arr)))

        probs = aggregate_scores(scores, logit_average=cfg.logit_average)
        return SnapshotLogits(cfg.snapshot_names, scores, probs, attention)


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(model: SnapshotModel, path: str | Path) -> Path:
    """Write a self-describing checkpoint: config JSON plus named weight arrays."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{name}": p.data for name, p in model.parameters().items()}
    np.savez(
        path,
        format_version=np.int64(CHECKPOINT_VERSION),
        config_json=np.bytes_(json.dumps(asdict(model.config)).encode()),
        **arrays,
    )
    return path if path.suffix == ".npz" else Path(str(path) + ".npz")


def load_checkpoint(path: str | Path) -> SnapshotModel:
    with np.load(Path(path), allow_pickle=False) as bundle:
        version = int(bundle["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        config = ModelConfig(**json.loads(bundle["config_json"].item().decode()))
        model = SnapshotModel(config, seed=0)
        params = model.parameters()
        for key in bundle.files:
            if not key.startswith("param/"):
                continue
            name = key[len("param/"):]
            if name not in params:
                raise ValueError(f"checkpoint has unknown parameter {name!r}")
            if params[name].shape != bundle[key].shape:
                raise ValueError(
                    f"parameter {name!r} shape {bundle[key].shape} does not match "
                    f"model shape {params[name].shape}"
                )
            params[name].data = bundle[key].astype(np.float64)
        missing = set(params) - {k[len("param/"):] for k in bundle.files
                                 if k.startswith("param/")}
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    return model
