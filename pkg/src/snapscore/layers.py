"""Transformer building blocks for snapshot encoding.

Blocks use the pre-norm residual layout and zero-initialize the attention
output projection and the second feed-forward weight, so every block is an
exact identity map at initialization.  That convention is load-bearing: it
makes "attention disabled" model variants coincide exactly with their
attention-free counterparts at matched weights, which the test suite checks
to 1e-12.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["Linear", "LayerNorm", "MultiHeadAttention", "FeedForward",
           "TransformerBlock", "Encoder"]

LN_EPS = 1e-5
FFN_MULT = 4


def _param(rng: np.random.Generator, shape: tuple[int, ...], scale: float) -> Tensor:
    if scale == 0.0:
        return Tensor(np.zeros(shape), requires_grad=True)
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


class Linear:
    """Affine map over the last axis: ``x @ W + b``."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 zero_init: bool = False):
        scale = 0.0 if zero_init else d_in ** -0.5
        self.weight = _param(rng, (d_in, d_out), scale)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ValueError(f"expected trailing width {self.d_in}, got {x.shape[-1]}")
        return x @ self.weight + self.bias

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class LayerNorm:
    def __init__(self, d: int):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * ((var + LN_EPS) ** -0.5) * self.gamma + self.beta

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


class MultiHeadAttention:
    """Scaled dot-product attention over token sets ``(batch, tokens, d)``.

    The output projection starts at zero (see module docstring).  When
    ``capture`` is set the forward pass also returns the softmax attention
    weights as a plain ``(batch, heads, tokens, tokens)`` array for export.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads != 0:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.d, self.heads, self.d_head = d, heads, d // heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng, zero_init=True)

    def __call__(self, x: Tensor, capture: bool = False
                 ) -> tuple[Tensor, np.ndarray | None]:
        b, n, d = x.shape
        h, dh = self.heads, self.d_head

        def split(t: Tensor) -> Tensor:
            return t.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

        # Scale q rather than the much larger score matrix.
        q = split(self.wq(x)) * (dh ** -0.5)
        k, v = split(self.wk(x)), split(self.wv(x))
        attn = (q @ k.transpose(0, 1, 3, 2)).softmax(axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        weights = attn.data.copy() if capture else None
        return self.wo(out), weights

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, lin in [("wq", self.wq), ("wk", self.wk),
                          ("wv", self.wv), ("wo", self.wo)]:
            out.update(lin.params(f"{prefix}.{name}"))
        return out


class FeedForward:
    def __init__(self, d: int, rng: np.random.Generator):
        self.w1 = Linear(d, FFN_MULT * d, rng)
        self.w2 = Linear(FFN_MULT * d, d, rng, zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(self.w1(x).gelu())

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.w1.params(f"{prefix}.w1"), **self.w2.params(f"{prefix}.w2")}


class TransformerBlock:
    """Pre-norm block: ``x + attn(ln(x))`` then ``x + ffn(ln(x))``."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, rng)

    def __call__(self, x: Tensor, capture: bool = False
                 ) -> tuple[Tensor, np.ndarray | None]:
        h, weights = self.attn(self.ln1(x), capture=capture)
        x = x + h
        x = x + self.ffn(self.ln2(x))
        return x, weights

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.ln1.params(f"{prefix}.ln1"))
        out.update(self.attn.params(f"{prefix}.attn"))
        out.update(self.ln2.params(f"{prefix}.ln2"))
        out.update(self.ffn.params(f"{prefix}.ffn"))
        return out


class Encoder:
    """Stack of transformer blocks with learned within-snapshot position embeddings."""

    def __init__(self, tokens: int, d: int, layers: int, heads: int,
                 rng: np.random.Generator):
        self.tokens, self.d = tokens, d
        self.pos = _param(rng, (tokens, d), 0.02)
        self.blocks = [TransformerBlock(d, heads, rng) for _ in range(layers)]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2] != self.tokens or x.shape[-1] != self.d:
            raise ValueError(
                f"encoder expects (batch, {self.tokens}, {self.d}) tokens, "
                f"got {x.shape}"
            )
        x = x + self.pos
        for block in self.blocks:
            x, _ = block(x)
        return x

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.pos": self.pos}
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"{prefix}.block{i}"))
        return out
