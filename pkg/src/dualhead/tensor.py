"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation records its output on a thread-local
:class:`Tape`; :func:`backward` replays the tape in reverse, so each recorded
operation's adjoint runs exactly once.  Feature maps use the (B, C, T, N)
layout: batch, channels, frames, joints.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, UsageError, ConfigError

_DTYPE = np.float64
_state = threading.local()


def set_default_dtype(dtype) -> None:
    """Switch new tensors to float32 or float64 (float64 is the default)."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"dtype must be float32 or float64, got {dtype}")
    _DTYPE = dtype.type


def default_dtype():
    return _DTYPE


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node._backward = None
            node._parents = ()
        self.nodes = []

    def first_nonfinite(self) -> str | None:
        """Name of the first recorded op whose output is not all finite."""
        for node in self.nodes:
            if not np.all(np.isfinite(node.data)):
                return node.op
        return None

    def __len__(self):
        return len(self.nodes)


def get_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = Tape()
    return tape


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "name", "_backward", "_parents", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=_DTYPE) if not isinstance(data, np.ndarray) else data
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.op = "leaf"
        self.name = name
        self._backward = None
        self._parents = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self.op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)


class Parameter(Tensor):
    """A named trainable tensor with a momentum buffer."""

    __slots__ = ("velocity",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True, name=name)
        self.velocity = np.zeros_like(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str,
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None
        out._parents = tuple(parents)
        out._backward = backward
        get_tape().record(out)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tracked leaf reachable from ``loss``.

    Leaf gradients accumulate across calls; intermediate gradients are
    recomputed from scratch each time.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tracked tensor")
    tape = get_tape()
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        _accumulate(x, g * mask)

    return _make(x.data * mask, (x,), "relu", bw)


def sigmoid(x: Tensor) -> Tensor:
    y = np.exp(-np.logaddexp(0.0, -x.data))

    def bw(g):
        _accumulate(x, g * y * (1.0 - y))

    return _make(y, (x,), "sigmoid", bw)


# ---------------------------------------------------------------------------
# shape ops

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape

    def bw(g):
        _accumulate(x, g.reshape(src))

    return _make(x.data.reshape(shape), (x,), "reshape", bw)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    try:
        data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise DimensionError(f"cannot concatenate shapes {[x.shape for x in xs]} on axis {axis}") from None
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for x, part in zip(xs, np.split(g, splits, axis=axis)):
            _accumulate(x, np.ascontiguousarray(part))

    return _make(data, xs, "concat", bw)


def take(x: Tensor, indices, axis: int) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)

    def bw(g):
        gx = np.zeros_like(x.data)
        sl = [slice(None)] * x.ndim
        sl[axis] = idx
        np.add.at(gx, tuple(sl), g)
        _accumulate(x, gx)

    return _make(np.take(x.data, idx, axis=axis), (x,), "take", bw)


def mean(x: Tensor, axes: int | Iterable[int] | None = None, keepdims: bool = True) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))
    elif isinstance(axes, int):
        axes = (axes,)
    axes = tuple(a % x.ndim for a in axes)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    y = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(g / count, x.shape).copy())

    return _make(y, (x,), "mean", bw)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """(B, C) x (O, C)^T + b -> (B, O)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear shape mismatch: input {x.shape}, weight {w.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        if x.requires_grad:
            _accumulate(x, g @ w.data)
        if w.requires_grad:
            _accumulate(w, g.T @ x.data)
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=0))

    return _make(y, parents, "linear", bw)


def _bias_grad(b, g):
    if b is not None and b.requires_grad:
        _accumulate(b, g.sum(axis=(0, 2, 3)))


def _check_feature(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what} expects a (B, C, T, N) tensor, got shape {x.shape}")


def pointwise_conv(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """1x1 convolution: per-(t, n) linear channel map with weight (O, C)."""
    _check_feature(x, "pointwise_conv")
    B, C, T, N = x.shape
    O = w.shape[0]
    if w.ndim != 2 or w.shape[1] != C:
        raise DimensionError(f"pointwise_conv channel mismatch: input {x.shape}, weight {w.shape}")
    x2 = x.data.reshape(B, C, T * N)
    y = np.matmul(w.data, x2).reshape(B, O, T, N)
    if b is not None:
        y += b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(B, O, T * N)
        if x.requires_grad:
            _accumulate(x, np.matmul(w.data.T, g2).reshape(B, C, T, N))
        if w.requires_grad:
            _accumulate(w, np.tensordot(g2, x2, axes=([0, 2], [0, 2])))
        _bias_grad(b, g)

    return _make(y, parents, "pointwise_conv", bw)


def conv_temporal(x: Tensor, w: Tensor, b: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Dilated "same" convolution along frames, independently per joint.

    ``w`` has shape (O, C, K) or (O, C, K, 1) with odd K.
    """
    _check_feature(x, "conv_temporal")
    wd = w.data.reshape(w.shape[:3]) if w.ndim == 4 else w.data
    if wd.ndim != 3:
        raise DimensionError(f"temporal kernel must be (O, C, K[, 1]), got {w.shape}")
    O, C, K = wd.shape
    if K % 2 == 0:
        raise ConfigError(f"temporal kernel length must be odd for symmetric padding, got {K}")
    if dilation < 1:
        raise ConfigError(f"dilation must be a positive integer, got {dilation}")
    B, Cx, T, N = x.shape
    if Cx != C:
        raise DimensionError(f"conv_temporal channel mismatch: input {x.shape}, weight {w.shape}")
    cols = kernels.unfold_time(x.data, K, dilation).reshape(B, C * K, T * N) if K > 1 \
        else x.data.reshape(B, C, T * N)
    w2 = wd.reshape(O, C * K)
    y = np.matmul(w2, cols).reshape(B, O, T, N)
    if b is not None:
        y += b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(B, O, T * N)
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)
            if K > 1:
                gx = kernels.fold_time(gcols.reshape(B, C, K, T, N), dilation)
            else:
                gx = gcols.reshape(B, C, T, N)
            _accumulate(x, gx)
        if w.requires_grad:
            _accumulate(w, np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape))
        _bias_grad(b, g)

    return _make(y, parents, "conv_temporal", bw)


def window_nodes(x: Tensor, tau: int) -> Tensor:
    """Stack a centred tau-frame window per frame: (B, C, T, N) -> (B, C, T, tau*N).

    Node ``p*N + j`` holds joint ``j`` at window slot ``p`` (frame ``t + p - tau//2``);
    frames outside the sequence are zero.
    """
    _check_feature(x, "window_nodes")
    if tau % 2 == 0 or tau < 1:
        raise ConfigError(f"window length must be a positive odd integer, got {tau}")
    B, C, T, N = x.shape
    cols = kernels.unfold_time(x.data, tau, 1)
    y = cols.transpose(0, 1, 3, 2, 4).reshape(B, C, T, tau * N)

    def bw(g):
        gc = np.ascontiguousarray(g.reshape(B, C, T, tau, N).transpose(0, 1, 3, 2, 4))
        _accumulate(x, kernels.fold_time(gc, 1))

    return _make(np.ascontiguousarray(y), (x,), "window_nodes", bw)


def graph_conv(x: Tensor, adj: np.ndarray, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Multi-scale graph convolution  y = sum_s A_s X W_s  (+ b).

    x: (B, C, T, M) node features; adj: constant (S, N_out, M); w: (O, S*C)
    with scale-major input index ``s*C + c``.  Returns (B, O, T, N_out).
    """
    _check_feature(x, "graph_conv")
    B, C, T, M = x.shape
    S, Nout, Ma = adj.shape
    if Ma != M:
        raise DimensionError(f"graph_conv joint mismatch: features have {M} nodes, adjacency expects {Ma}")
    O = w.shape[0]
    if w.ndim != 2 or w.shape[1] != S * C:
        raise DimensionError(f"graph_conv weight must be ({O}, {S * C}), got {w.shape}")
    a_flat = adj.reshape(S * Nout, M)
    z = (x.data @ a_flat.T).reshape(B, C, T, S, Nout)
    z = np.ascontiguousarray(z.transpose(0, 3, 1, 2, 4)).reshape(B, S * C, T * Nout)
    y = np.matmul(w.data, z).reshape(B, O, T, Nout)
    if b is not None:
        y += b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(B, O, T * Nout)
        if x.requires_grad:
            gz = np.matmul(w.data.T, g2).reshape(B, S, C, T, Nout)
            gz = np.ascontiguousarray(gz.transpose(0, 2, 3, 1, 4)).reshape(B, C, T, S * Nout)
            _accumulate(x, gz @ a_flat)
        if w.requires_grad:
            _accumulate(w, np.tensordot(g2, z, axes=([0, 2], [0, 2])))
        _bias_grad(b, g)

    return _make(y, parents, "graph_conv", bw)


BN_EPS = 1e-7


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float | None = None) -> Tensor:
    """Per-channel normalization over (B, T, N).

    In training mode batch statistics are used and the running buffers are
    updated in place; in eval mode the running statistics are used.
    """
    _check_feature(x, "batch_norm")
    eps = BN_EPS if eps is None else eps
    C = x.shape[1]
    shp = (1, C, 1, 1)
    if training:
        n = x.data.size // C
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shp)) * inv.reshape(shp)
    y = gamma.data.reshape(shp) * xhat + beta.data.reshape(shp)

    def bw(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shp)
            if training:
                m = x.data.size // C
                s1 = dxhat.sum(axis=(0, 2, 3)).reshape(shp)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shp)
                gx = (inv.reshape(shp) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv.reshape(shp)
            _accumulate(x, gx)

    return _make(y, (x, gamma, beta), "batch_norm", bw)


# ---------------------------------------------------------------------------
# classification

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), "softmax", bw)


PROB_FLOOR = 1e-12


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of -log(p[label]) with probabilities floored at 1e-12.

    ``probs`` is (a,) with an integer label, or (B, a) with B labels.
    """
    single = probs.ndim == 1
    p = probs.data[None] if single else probs.data
    lab = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    B, a = p.shape
    if lab.shape != (B,):
        raise DimensionError(f"expected {B} labels, got shape {lab.shape}")
    if np.any(lab < 0) or np.any(lab >= a):
        raise IndexError(f"label out of range [0, {a}): {lab[(lab < 0) | (lab >= a)].tolist()}")
    rows = np.arange(B)
    picked = p[rows, lab]
    clamped = np.maximum(picked, PROB_FLOOR)
    loss = -np.log(clamped).mean()

    def bw(g):
        gp = np.zeros_like(p)
        gp[rows, lab] = np.where(picked > PROB_FLOOR, -1.0 / clamped, 0.0) * (g.reshape(()) / B)
        _accumulate(probs, gp[0] if single else gp)

    return _make(np.asarray(loss, dtype=p.dtype), (probs,), "cross_entropy", bw)
