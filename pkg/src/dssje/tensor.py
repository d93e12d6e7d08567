"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive builds its output eagerly with numpy and, when any input
requires a gradient, attaches a closure that pushes the output adjoint back
to its inputs.  :func:`build_tape` orders the recorded nodes so that
:func:`backward` can replay each closure exactly once.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DegenerateInputError, EmptySequenceError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference only)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat view of the data in row-major order."""
        return self.data.reshape(-1)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, op={self._op})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a constant")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return tmean(self, axis)

    def max(self, axis: int) -> "Tensor":
        return tmax(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self) -> "Tensor":
        return relu(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str,
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- tape ------------------------------------------------------------------

def build_tape(root: Tensor) -> list[Tensor]:
    """Return the recorded nodes reachable from ``root`` in topological order.

    Leaves are included; each node appears once.  Iterative so that long
    recurrent unrolls do not hit the interpreter recursion limit.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> list[Tensor]:
    """Populate ``.grad`` on every reachable leaf that requires a gradient.

    Intermediate adjoints are released once replay finishes.  Returns the
    replayed tape (reverse order) for inspection.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    tape = build_tape(loss)
    for node in tape:
        if node.requires_grad and node.is_leaf and node.grad is None:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    replayed = []
    for node in reversed(tape):
        if node._backward is None:
            continue
        if node.grad is not None:
            node._backward(node.grad)
        replayed.append(node)
    for node in replayed:
        node.grad = None
    return replayed


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), "add", _bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _node(a.data - b.data, (a, b), "sub", _bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), "mul", _bw)


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly zero is taken as zero."""
    mask = x.data > 0

    def _bw(g):
        _accumulate(x, g * mask)

    # np.maximum keeps NaN so a diverged run is caught rather than masked
    return _node(np.maximum(x.data, 0.0), (x,), "relu", _bw)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def _bw(g):
        _accumulate(x, g * (1.0 - y * y))

    return _node(y, (x,), "tanh", _bw)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def _bw(g):
        _accumulate(x, g * y * (1.0 - y))

    return _node(y, (x,), "sigmoid", _bw)


# -- linear algebra --------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an [m x k] and a [k x n] tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), "matmul", _bw)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")

    def _bw(g):
        _accumulate(x, g.T)

    return _node(x.data.T.copy(), (x,), "transpose", _bw)


def diagonal(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"diagonal expects a square matrix, got shape {x.shape}")
    n = x.shape[0]

    def _bw(g):
        full = np.zeros_like(x.data)
        full[np.arange(n), np.arange(n)] = g
        _accumulate(x, full)

    return _node(np.diagonal(x.data).copy(), (x,), "diagonal", _bw)


# -- reductions and reshaping ---------------------------------------------

def tsum(x: Tensor, axis=None) -> Tensor:
    def _bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _node(np.asarray(x.data.sum(axis=axis)), (x,), "sum", _bw)


def tmean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis), 1.0 / n)


def tmax(x: Tensor, axis: int) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def _bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        _accumulate(x, full)

    return _node(out, (x,), "max", _bw)


def reshape(x: Tensor, shape) -> Tensor:
    def _bw(g):
        _accumulate(x, g.reshape(x.shape))

    return _node(x.data.reshape(shape), (x,), "reshape", _bw)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(x: Tensor, index) -> Tensor:
    basic = _is_basic_index(index)

    def _bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        _accumulate(x, full)

    return _node(np.array(x.data[index]), (x,), "getitem", _bw)


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a [n x k] table; result has shape ids.shape + (k,)."""
    ids = np.asarray(ids, dtype=np.int64)

    def _bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _accumulate(table, full)

    return _node(table.data[ids], (table,), "take_rows", _bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def _bw(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack", _bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _bw(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(t, part)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", _bw)


def temporal_mean(hs: Sequence[Tensor], lengths: np.ndarray | None = None) -> Tensor:
    """Average a sequence of hidden states.

    Without ``lengths`` every step counts.  With ``lengths`` (one per row of
    batched [B x d] states) step i contributes to row b only if i < lengths[b];
    masked steps contribute exactly zero.
    """
    hs = list(hs)
    if not hs:
        raise EmptySequenceError("temporal_mean of an empty sequence")
    shape = hs[0].shape
    for h in hs:
        if h.shape != shape:
            raise ShapeError(f"temporal_mean got mixed shapes {shape} and {h.shape}")
    L = len(hs)
    if lengths is None:
        total = hs[0].data.copy()
        for h in hs[1:]:
            total = total + h.data

        def _bw(g):
            for h in hs:
                _accumulate(h, g / L)

        return _node(total / L, tuple(hs), "temporal_mean", _bw)

    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise EmptySequenceError("temporal_mean with a zero-length row")
    weights = [((i < lengths) / lengths)[:, None] for i in range(L)]
    total = np.zeros(shape)
    for h, w in zip(hs, weights):
        total = total + np.where(w > 0, h.data * w, 0.0)

    def _bw_masked(g):
        for h, w in zip(hs, weights):
            _accumulate(h, g * w)

    return _node(total, tuple(hs), "temporal_mean", _bw_masked)


# -- temporal convolution and pooling --------------------------------------

def conv1d_temporal(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation along time.

    ``x`` is [channels x length] or batched [B x channels x length];
    ``kernels`` is [out x channels x width].
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    batched = x.ndim == 3
    if x.ndim not in (2, 3) or kernels.ndim != 3:
        raise ShapeError(f"conv1d_temporal shapes {x.shape} and {kernels.shape}")
    X = x.data if batched else x.data[None]
    B, C, L = X.shape
    O, Ck, W = kernels.shape
    if C != Ck:
        raise ShapeError(f"conv1d_temporal channel mismatch: input {x.shape}, kernels {kernels.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    if W > L:
        raise DegenerateInputError(f"kernel width {W} exceeds input length {L}")
    T = (L - W) // stride + 1
    # cols[b, t, c*W + w] = X[b, c, t*stride + w]
    cols = sliding_window_view(X, W, axis=2)[:, :, ::stride, :][:, :, :T, :]
    cols = cols.transpose(0, 2, 1, 3).reshape(B, T, C * W)
    kflat = kernels.data.reshape(O, C * W)
    out = (cols @ kflat.T).transpose(0, 2, 1)
    if not batched:
        out = out[0]

    def _bw(g):
        G = (g if batched else g[None]).transpose(0, 2, 1)  # [B, T, O]
        if kernels.requires_grad:
            dk = G.reshape(B * T, O).T @ cols.reshape(B * T, C * W)
            _accumulate(kernels, dk.reshape(O, C, W))
        if x.requires_grad:
            dcols = (G @ kflat).reshape(B, T, C, W)
            dX = np.zeros_like(X)
            span = stride * (T - 1) + 1
            for w in range(W):
                dX[:, :, w:w + span:stride] += dcols[:, :, :, w].transpose(0, 2, 1)
            _accumulate(x, dX if batched else dX[0])

    return _node(np.ascontiguousarray(out), (x, kernels), "conv1d", _bw)


def maxpool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping temporal max-pooling; a ragged tail is dropped.

    Output length is floor(length / window).  The gradient is routed to the
    first maximal position of each window.
    """
    x = as_tensor(x)
    if window < 1:
        raise ShapeError(f"pool window must be >= 1, got {window}")
    batched = x.ndim == 3
    if x.ndim not in (2, 3):
        raise ShapeError(f"maxpool1d expects [C x L] or [B x C x L], got {x.shape}")
    X = x.data if batched else x.data[None]
    B, C, L = X.shape
    T = L // window
    if T == 0:
        raise ShapeError(f"pool window {window} exceeds input length {L}")
    blocks = X[:, :, :T * window].reshape(B, C, T, window)
    idx = np.argmax(blocks, axis=3)
    out = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]
    if not batched:
        out = out[0]

    def _bw(g):
        G = g if batched else g[None]
        full = np.zeros((B, C, T, window))
        np.put_along_axis(full, idx[..., None], G[..., None], axis=3)
        dX = np.zeros_like(X)
        dX[:, :, :T * window] = full.reshape(B, C, T * window)
        _accumulate(x, dX if batched else dX[0])

    return _node(out, (x,), "maxpool1d", _bw)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
