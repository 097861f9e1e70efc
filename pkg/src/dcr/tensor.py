"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays (float64 for checking, float32 for training).
Operations build a graph eagerly; ``Tensor.backward()`` walks it in
reverse topological order and accumulates gradients by summation, so
shared subexpressions are handled correctly. The primitive set is
exactly what the reasoners and losses need: matrix product, elementwise
arithmetic, ReLU/GELU, sigmoid/tanh, exp/log, softmax, layer norm,
reductions, L2 norm, mean square error and cosine similarity.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

Array = np.ndarray
ArrayLike = Union[float, int, Sequence, Array, "Tensor"]

DEFAULT_DTYPE = np.float64


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff.

    Attributes:
        data: the stored values, a numpy array.
        requires_grad: whether gradients should be tracked through this node.
        grad: accumulated gradient, same shape as ``data``; allocated on
            first accumulation during a backward pass, ``None`` before.
    """

    __array_priority__ = 100  # keep numpy from hijacking reflected operators

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: tuple = (),
        _backward: Optional[Callable[[Array], None]] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=None if isinstance(data, np.ndarray) else DEFAULT_DTYPE)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[Array] = None
        self._parents = _parents if requires_grad else ()
        self._backward = _backward if requires_grad else None

    # -- basic introspection ---------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> Array:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- graph mechanics ---------------------------------------------------

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Gradients sum over all paths, so a tensor feeding several ops
        receives the total derivative.
        """
        if self.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:  # iterative DFS; deep LSTM graphs overflow recursion
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self) -> "Tensor":
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, idx) -> "Tensor":
        return getitem(self, idx)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def tensor(data: ArrayLike, requires_grad: bool = False, dtype=None) -> Tensor:
    """Wrap ``data`` as a Tensor, optionally casting to ``dtype``."""
    arr = np.asarray(data, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(dtype or DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=requires_grad)


def _as_tensor(x: ArrayLike, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data: Array, parents: tuple, backward: Callable[[Array], None]) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents, _backward=backward if req else None)


def _pair(a: ArrayLike, b: ArrayLike) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype if isinstance(b, Tensor) else None))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


# -- elementwise arithmetic -------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data + b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data - b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data * b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data / b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    # stacked-by-matrix products collapse to one large GEMM
    folded = a.data.ndim >= 3 and b.data.ndim == 2
    if folded:
        a2d = a.data.reshape(-1, a.data.shape[-1])
        out_data = (a2d @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    else:
        out_data = a.data @ b.data

    def backward(g: Array) -> None:
        if folded:
            g2d = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                a._accumulate((g2d @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                b._accumulate(a2d.T @ g2d)
            return
        if a.requires_grad:
            if b.data.ndim == 1:
                ga = np.outer(g, b.data) if a.data.ndim == 2 else g * b.data
            else:
                gg = g[..., None, :] if a.data.ndim == 1 else g
                ga = gg @ np.swapaxes(b.data, -1, -2)
                if a.data.ndim == 1:
                    ga = ga.reshape(a.shape)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.data.ndim == 1:
                gb = np.outer(a.data, g) if b.data.ndim == 2 else g * a.data
            else:
                gg = g[..., None] if b.data.ndim == 1 else g
                gb = np.swapaxes(a.data, -1, -2) @ gg
                if b.data.ndim == 1:
                    gb = gb.reshape(b.shape)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), backward)


# -- shape manipulation ------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(g: Array) -> None:
        x._accumulate(g.reshape(x.shape))

    return _make(out_data, (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    out_data = np.transpose(x.data, axes)

    def backward(g: Array) -> None:
        inv = None if axes is None else np.argsort(axes)
        x._accumulate(np.transpose(g, inv))

    return _make(out_data, (x,), backward)


def getitem(x: Tensor, idx) -> Tensor:
    out_data = x.data[idx]

    def backward(g: Array) -> None:
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        x._accumulate(gx)

    return _make(out_data, (x,), backward)


# -- nonlinearities ----------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)

    def backward(g: Array) -> None:
        x._accumulate(g * (x.data > 0))

    return _make(out_data, (x,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation (the variant differentiated here too)."""
    sq = x.data * x.data
    u = _GELU_C * (x.data + 0.044715 * sq * x.data)
    t = np.tanh(u)
    out_data = 0.5 * x.data * (1.0 + t)

    def backward(g: Array) -> None:
        du = _GELU_C * (1.0 + 3 * 0.044715 * sq)
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du))

    return _make(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g: Array) -> None:
        x._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g: Array) -> None:
        x._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward(g: Array) -> None:
        x._accumulate(g * out_data)

    return _make(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)

    def backward(g: Array) -> None:
        x._accumulate(g / x.data)

    return _make(out_data, (x,), backward)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient is zero on clamped entries."""
    out_data = np.maximum(x.data, floor)

    def backward(g: Array) -> None:
        x._accumulate(g * (x.data > floor))

    return _make(out_data, (x,), backward)


# -- reductions ---------------------------------------------------------------

def _expand_reduced(g: Array, shape: tuple, axis, keepdims: bool) -> Array:
    if not keepdims and axis is not None:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> None:
        x._accumulate(_expand_reduced(g, x.shape, axis, keepdims))

    return _make(out_data, (x,), backward)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / max(out_data.size, 1)

    def backward(g: Array) -> None:
        x._accumulate(_expand_reduced(g, x.shape, axis, keepdims) / count)

    return _make(out_data, (x,), backward)


def l2_norm(x: Tensor, axis=None, keepdims: bool = False, _tiny: float = 1e-30) -> Tensor:
    """Euclidean norm over ``axis`` (or the whole tensor).

    The value is the exact norm; at a zero vector the gradient uses a
    tiny-clamped denominator so it stays finite (and is zero, since the
    numerator is the input itself).
    """
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=keepdims))

    def backward(g: Array) -> None:
        denom = np.maximum(norm, _tiny)
        gx = _expand_reduced(g / denom, x.shape, axis, keepdims) * x.data
        x._accumulate(gx)

    return _make(norm, (x,), backward)


def mse(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Mean square error between two same-shape tensors, as a scalar."""
    a, b = _pair(a, b)
    diff = a.data - b.data
    out_data = np.asarray((diff * diff).mean())
    n = diff.size

    def backward(g: Array) -> None:
        base = (2.0 / n) * diff * g
        if a.requires_grad:
            a._accumulate(base)
        if b.requires_grad:
            b._accumulate(-base)

    return _make(out_data, (a, b), backward)


def cosine_similarity(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Cosine similarity of two vectors, as a scalar in [-1, 1].

    A zero-norm input makes the similarity undefined; instead of NaN the
    result is 0 with ``degenerate_input`` set on the output (and no
    gradient flows), so all-zero masked tokens cannot poison a loss.
    """
    a, b = _pair(a, b)
    na = float(np.sqrt((a.data * a.data).sum()))
    nb = float(np.sqrt((b.data * b.data).sum()))
    degenerate = na == 0.0 or nb == 0.0
    if degenerate:
        out = _make(np.asarray(0.0, dtype=a.dtype), (a, b), lambda g: None)
        out.degenerate_input = True
        return out
    c = float((a.data * b.data).sum()) / (na * nb)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g * (b.data / (na * nb) - c * a.data / (na * na)))
        if b.requires_grad:
            b._accumulate(g * (a.data / (na * nb) - c * b.data / (nb * nb)))

    out = _make(np.asarray(c, dtype=a.dtype), (a, b), backward)
    out.degenerate_input = False
    return out


# -- structured ops ------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis`` (max is subtracted)."""
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g: Array) -> None:
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate(out_data * (g - inner))

    return _make(out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if x.shape[-1] < 2:
        raise ValueError("layer_norm needs at least 2 features")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def backward(g: Array) -> None:
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx_hat = g * gain.data
            m1 = gx_hat.mean(axis=-1, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx_hat - m1 - xhat * m2))

    return _make(out_data, (x, gain, bias), backward)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or ``rng`` is None."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def backward(g: Array) -> None:
        x._accumulate(g * keep)

    return _make(x.data * keep, (x,), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack same-shape tensors along a new axis."""
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g: Array) -> None:
        slices = np.moveaxis(g, axis, 0)
        for t, gt in zip(tensors, slices):
            if t.requires_grad:
                t._accumulate(gt)

    return _make(out_data, tuple(tensors), backward)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    """Filter an iterable down to gradient-tracking leaf tensors."""
    return [t for t in tensors if t.requires_grad]
