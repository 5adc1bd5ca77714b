"""Minimal tensor engine with reverse-mode autodiff on top of numpy.

Tensors wrap row-major numpy arrays (f32 or f64). Every op records its
parents and a backward closure; calling ``backward()`` on a scalar walks
the traced graph once in reverse topological order. Compute dtype is
normally f32; gradient-check tests run the same ops in f64.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class EngineError(Exception):
    """Base error for engine misuse."""


class ShapeError(EngineError):
    """Operand shapes or dtypes are incompatible."""


class NumericsError(EngineError):
    """A non-finite value was produced or consumed."""


_grad_enabled = True
_debug_checks = False

_DTYPES = (np.float32, np.float64)


def set_debug_checks(enabled: bool) -> None:
    """Toggle eager per-op NaN/Inf detection (off by default; trainers
    check the loss once per step instead)."""
    global _debug_checks
    _debug_checks = bool(enabled)


@contextmanager
def debug_checks(enabled: bool = True):
    global _debug_checks
    prev = _debug_checks
    _debug_checks = enabled
    try:
        yield
    finally:
        _debug_checks = prev


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite value produced by op '{op}'")


class Tensor:
    """A numpy array plus autodiff bookkeeping.

    Treat tensors as immutable once produced; training code mutates
    parameter ``data`` in place only between graph traces.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in _DTYPES:
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def from_op(data: np.ndarray, parents: tuple["Tensor", ...], op: str,
                backward: Callable[[np.ndarray], None] | None) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = data
        t.requires_grad = False
        t.grad = None
        if _grad_enabled and backward is not None and any(p._tracked for p in parents):
            t._parents = parents
            t._backward = backward
        else:
            t._parents = ()
            t._backward = None
        t._op = op
        if _debug_checks:
            _check_finite(data, op)
        return t

    @property
    def _tracked(self) -> bool:
        return self.requires_grad or self._backward is not None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._op = "detach"
        return t

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op})"

    # -- autodiff ------------------------------------------------------------

    def accumulate_grad(self, g: np.ndarray, fresh: bool = False) -> None:
        """Add ``g`` into this tensor's grad buffer.

        ``fresh`` marks arrays the caller just computed and owns outright;
        those are adopted without a defensive copy."""
        if self.grad is None:
            if fresh and g.base is None:
                self.grad = g
            else:
                # copy: g may be a view or alias another node's buffer
                self.grad = np.array(g, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar node; fills ``.grad`` on every
        reachable tensor that requires grad."""
        Graph.trace(self).run_backward()

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators -----------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.dtype != self.dtype:
                raise ShapeError(
                    f"dtype mismatch: {self.dtype} vs {other.dtype}")
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return sub(self._coerce(other), self)

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self._coerce(other), self)

    def __neg__(self):
        return mul(self, self._coerce(-1.0))

    def __matmul__(self, other):
        return matmul(self, self._coerce(other))

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Graph:
    """Topologically ordered trace of the ops reachable from one root.

    ``nodes`` lists every traced tensor with inputs before users; the
    backward sweep visits each node exactly once.
    """

    def __init__(self, root: Tensor, nodes: list[Tensor], parameters: list[Tensor]):
        self.root = root
        self.nodes = nodes
        self.parameters = parameters

    @staticmethod
    def trace(root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        # iterative DFS; loops unrolled over many iterations would blow the
        # recursion limit
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        params = [n for n in order if n.requires_grad]
        return Graph(root, order, params)

    def run_backward(self) -> None:
        root = self.root
        if root.size != 1:
            raise ShapeError(
                f"backward requires a scalar root, got shape {root.shape}")
        root.grad = np.ones_like(root.data)
        for node in reversed(self.nodes):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)

    def grads(self) -> list[np.ndarray | None]:
        return [p.grad for p in self.parameters]


def backward(graph: Graph, loss: Tensor | None = None) -> dict[int, np.ndarray]:
    """Run the reverse sweep of ``graph`` and return grads keyed by
    parameter position."""
    if loss is not None and loss is not graph.root:
        graph = Graph.trace(loss)
    graph.run_backward()
    return {i: p.grad for i, p in enumerate(graph.parameters)}


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "add")
    out_data = a.data + b.data

    def bwd(g: np.ndarray) -> None:
        ga = _unbroadcast(g, a.shape)
        a.accumulate_grad(ga, fresh=ga is not g)
        gb = _unbroadcast(g, b.shape)
        b.accumulate_grad(gb, fresh=gb is not g)

    return Tensor.from_op(out_data, (a, b), "add", bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "sub")
    out_data = a.data - b.data

    def bwd(g: np.ndarray) -> None:
        ga = _unbroadcast(g, a.shape)
        a.accumulate_grad(ga, fresh=ga is not g)
        b.accumulate_grad(_unbroadcast(-g, b.shape), fresh=True)

    return Tensor.from_op(out_data, (a, b), "sub", bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "mul")
    out_data = a.data * b.data

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(_unbroadcast(g * b.data, a.shape), fresh=True)
        b.accumulate_grad(_unbroadcast(g * a.data, b.shape), fresh=True)

    return Tensor.from_op(out_data, (a, b), "mul", bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul expects operands with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim == 2:
        # one large gemm instead of a per-batch loop
        k = a.shape[-1]
        out_data = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out_data = np.matmul(a.data, b.data)

    def bwd(g: np.ndarray) -> None:
        # grad wrt a: g @ b^T; wrt b: a^T @ g, folding broadcast batch dims
        if a.ndim > 2 and b.ndim == 2:
            n = g.shape[-1]
            ga = (g.reshape(-1, n) @ b.data.T).reshape(a.shape)
        else:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        a.accumulate_grad(_unbroadcast_batched(ga, a.shape), fresh=True)
        if b.ndim == 2 and a.ndim > 2:
            # common weight case: fold the batch into one gemm
            k = a.shape[-1]
            n = g.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            b.accumulate_grad(gb, fresh=True)
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast_batched(gb, b.shape), fresh=True)

    return Tensor.from_op(out_data, (a, b), "matmul", bwd)


def _unbroadcast_batched(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Like _unbroadcast but the trailing two (matrix) dims always match."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape[:-2]) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = np.argsort(axes)
    out_data = np.transpose(a.data, axes)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(np.transpose(g, inv))

    return Tensor.from_op(out_data, (a,), "transpose", bwd)


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    in_shape = a.shape
    out_data = a.data.reshape(shape)

    def bwd(g: np.ndarray) -> None:
        a.accumulate_grad(g.reshape(in_shape))

    return Tensor.from_op(out_data, (a,), "reshape", bwd)


def index_select(a: Tensor, axis: int, indices) -> Tensor:
    """Gather slices of ``a`` along ``axis`` (embedding lookup when axis=0)."""
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise ShapeError("index_select expects 1-D indices")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise ShapeError(
            f"index_select: index out of range for axis {axis} of extent {a.shape[axis]}")
    out_data = np.take(a.data, idx, axis=axis)

    def bwd(g: np.ndarray) -> None:
        ga = np.zeros_like(a.data)
        sl: list = [slice(None)] * a.ndim
        sl[axis] = idx
        np.add.at(ga, tuple(sl), g)
        a.accumulate_grad(ga, fresh=True)

    return Tensor.from_op(out_data, (a,), "index_select", bwd)


def softmax_rows(a: Tensor) -> Tensor:
    """Numerically stabilized softmax over the last axis."""
    x = a.data
    # -Inf is a legitimate mask value (exp -> exactly 0); NaN and +Inf are not
    if np.isnan(x).any() or np.isposinf(x).any():
        raise NumericsError("softmax_rows: NaN or +Inf in input")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        s = out_data
        dot = (g * s).sum(axis=-1, keepdims=True)
        a.accumulate_grad(s * (g - dot), fresh=True)

    return Tensor.from_op(out_data, (a,), "softmax_rows", bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm: last axis must be non-empty")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma/beta must have shape ({d},), got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = gamma.data * xhat + beta.data

    def bwd(g: np.ndarray) -> None:
        lead = tuple(range(g.ndim - 1))
        gamma.accumulate_grad((g * xhat).sum(axis=lead), fresh=True)
        beta.accumulate_grad(g.sum(axis=lead), fresh=True)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        x.accumulate_grad(inv * (dxhat - m1 - xhat * m2), fresh=True)

    return Tensor.from_op(out_data, (x, gamma, beta), "layer_norm", bwd)


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation (the GPT-2 activation)."""
    xd = x.data
    dt = xd.dtype.type
    x2 = xd * xd
    u = x2 * xd
    u *= dt(_GELU_A)
    u += xd
    u *= dt(_GELU_C)
    np.tanh(u, out=u)
    th = u
    out_data = th + dt(1.0)
    out_data *= xd
    out_data *= dt(0.5)

    def bwd(g: np.ndarray) -> None:
        du = x2 * dt(3.0 * _GELU_A)
        du += dt(1.0)
        du *= dt(_GELU_C)
        dx = dt(1.0) - th * th
        dx *= du
        dx *= xd
        dx += dt(1.0) + th
        dx *= dt(0.5)
        dx *= g
        x.accumulate_grad(dx, fresh=True)

    return Tensor.from_op(out_data, (x,), "gelu", bwd)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def bwd(g: np.ndarray) -> None:
        x.accumulate_grad(g * (x.data > 0), fresh=True)

    return Tensor.from_op(out_data, (x,), "relu", bwd)


def reduce_sum(a: Tensor, axis: int | tuple[int, ...] | None = None,
               keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g: np.ndarray) -> None:
        if axis is None:
            ga = np.broadcast_to(g, a.shape)
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            if not keepdims:
                g = np.expand_dims(g, axes)
            ga = np.broadcast_to(g, a.shape)
        a.accumulate_grad(ga)

    return Tensor.from_op(np.asarray(out_data), (a,), "reduce_sum", bwd)


def reduce_mean(a: Tensor, axis: int | tuple[int, ...] | None = None,
                keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    s = reduce_sum(a, axis=axis, keepdims=keepdims)
    return mul(s, s._coerce(1.0 / count))


def squared_error_mean(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of elementwise squared differences, as one fused node."""
    _binary_check(pred, target, "squared_error_mean")
    diff = pred.data - target.data
    n = diff.size
    out_data = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)

    def bwd(g: np.ndarray) -> None:
        base = (2.0 / n) * diff * g
        pred.accumulate_grad(_unbroadcast(base, pred.shape), fresh=True)
        target.accumulate_grad(_unbroadcast(-base, target.shape), fresh=True)

    return Tensor.from_op(out_data, (pred, target), "squared_error_mean", bwd)


# ---------------------------------------------------------------------------
# convenience constructors
# ---------------------------------------------------------------------------


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def parameter(data, dtype=np.float32) -> Tensor:
    t = Tensor(np.asarray(data, dtype=dtype))
    t.requires_grad = True
    return t


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    t = Tensor(np.zeros(shape, dtype=dtype))
    t.requires_grad = requires_grad
    return t


def check_finite_tensor(t: Tensor, what: str = "tensor") -> None:
    """Per-step guard used by trainers when eager checks are off."""
    _check_finite(t.data, what)
