"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Just enough machinery for the snapshot model: broadcasting arithmetic,
batched matmul, softmax, gelu, layer-norm building blocks, reshapes and
concatenation.  Every primitive defines its exact analytic vector-Jacobian
product; the test suite checks each one against central differences.

Graphs are built eagerly while ``grad_enabled()`` is true (the default) and
freed by ordinary garbage collection after ``backward``.  Inference code
wraps calls in ``no_grad()`` to skip graph construction entirely.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = ["Tensor", "no_grad", "grad_enabled", "concatenate"]

_GRAD_ENABLED = True

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715

# Shifted softmax arguments below this floor contribute < 1e-26 of the max
# term; clamping them avoids subnormal-range exp, which runs ~100x slower.
_SOFTMAX_ARG_FLOOR = -60.0


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


class Tensor:
    """A floating-point array plus the closure that routes gradients to its parents.

    Non-float inputs are promoted to float64; float32 arrays keep their dtype
    so frozen-weight inference can run in single precision.  Gradient-bearing
    computations should stay in float64.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], None] | None = None

    # -- graph plumbing -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def _accumulate(self, grad: np.ndarray) -> None:
        # Copy on first write: incoming buffers may be views or shared with
        # sibling nodes, and later accumulations mutate in place.
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor; defaults to d(self)/d(self) = 1 for scalars."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"],
              vjp: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        # Python scalars stay scalars: they are dtype-neutral and need no
        # gradient routing.
        if isinstance(other, (int, float)):
            a, c = self, float(other)

            def vjp_scalar(g: np.ndarray) -> None:
                if a.requires_grad:
                    a._accumulate(g)

            return self._make(a.data + c, (a,), vjp_scalar)
        a, b = self, self._lift(other)
        data = a.data + b.data

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return self._make(data, (a, b), vjp)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(-g)

        return self._make(-a.data, (a,), vjp)

    def __sub__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self + (-float(other))
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Tensor":
        return (-self) + other

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            a, c = self, float(other)

            def vjp_scalar(g: np.ndarray) -> None:
                if a.requires_grad:
                    a._accumulate(g * c)

            return self._make(a.data * c, (a,), vjp_scalar)
        a, b = self, self._lift(other)
        data = a.data * b.data

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return self._make(data, (a, b), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self * (1.0 / float(other))
        return self * (self._lift(other) ** -1.0)

    def __rtruediv__(self, other) -> "Tensor":
        return (self ** -1.0) * other

    def __pow__(self, exponent: float) -> "Tensor":
        a = self
        e = float(exponent)
        data = a.data ** e

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g * e * a.data ** (e - 1.0))

        return self._make(data, (a,), vjp)

    def __matmul__(self, other) -> "Tensor":
        a, b = self, self._lift(other)
        data = a.data @ b.data

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.shape))

        return self._make(data, (a, b), vjp)

    # -- elementwise nonlinearities ------------------------------------------

    def exp(self) -> "Tensor":
        a = self
        data = np.exp(a.data)

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g * data)

        return self._make(data, (a,), vjp)

    def log(self) -> "Tensor":
        a = self

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g / a.data)

        return self._make(np.log(a.data), (a,), vjp)

    def gelu(self) -> "Tensor":
        """Gaussian-error linear unit, tanh form; smooth everywhere.

        The backward pass differentiates the tanh approximation itself, so
        analytic and finite-difference gradients agree to machine precision.
        """
        a = self
        x = a.data
        inner = _GELU_C * (x + _GELU_A * x * x * x)
        t = np.tanh(inner)
        data = 0.5 * x * (1.0 + t)

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                sech2 = 1.0 - t * t
                d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
                a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner))

        return self._make(data, (a,), vjp)

    def clamp_min(self, floor: float) -> "Tensor":
        """max(x, floor); gradient flows only where x > floor."""
        a = self
        data = np.maximum(a.data, floor)

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g * (a.data > floor))

        return self._make(data, (a,), vjp)

    def softmax(self, axis: int = -1) -> "Tensor":
        a = self
        data = a.data - a.data.max(axis=axis, keepdims=True)
        np.maximum(data, _SOFTMAX_ARG_FLOOR, out=data)
        np.exp(data, out=data)
        data /= data.sum(axis=axis, keepdims=True)

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                inner = (g * data).sum(axis=axis, keepdims=True)
                a._accumulate(data * (g - inner))

        return self._make(data, (a,), vjp)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis: int | tuple[int, ...] | None = None,
            keepdims: bool = False) -> "Tensor":
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g: np.ndarray) -> None:
            if not a.requires_grad:
                return
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.shape).copy())
                return
            if not keepdims:
                axes = (axis,) if isinstance(axis, int) else axis
                g = np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
            a._accumulate(np.broadcast_to(g, a.shape).copy())

        return self._make(data, (a,), vjp)

    def mean(self, axis: int | tuple[int, ...] | None = None,
             keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g.reshape(a.shape))

        return self._make(a.data.reshape(shape), (a,), vjp)

    def transpose(self, *axes: int) -> "Tensor":
        a = self
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g.transpose(inverse))

        return self._make(a.data.transpose(axes), (a,), vjp)

    def __getitem__(self, key) -> "Tensor":
        a = self
        data = a.data[key]

        def vjp(g: np.ndarray) -> None:
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.add.at(full, key, g)
                a._accumulate(full)

        return self._make(data, (a,), vjp)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def concatenate(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``; gradients split back by size."""
    parts = [Tensor._lift(t) for t in tensors]
    if not parts:
        raise ValueError("concatenate needs at least one tensor")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                index: list = [slice(None)] * g.ndim
                index[axis] = slice(int(lo), int(hi))
                p._accumulate(g[tuple(index)])

    return Tensor._make(data, parts, vjp)
