"""Dense float tensors with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays in (batch, channel, height, width)
layout for 4-D data. Every operation that sees a `requires_grad` input
records a backward closure; `backward()` walks the recorded graph in
reverse topological order and accumulates gradients into leaf tensors.

Conventions fixed here and relied on everywhere else:
  * argmax / max reductions break ties at the first occurrence in
    row-major order;
  * leaf gradients accumulate across backward calls until `zero_grad`;
  * every op output must be finite, otherwise NumericError is raised
    immediately (so divergence surfaces at the op that produced it).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from tclnet.errors import ContractError, DomainError, NumericError, ShapeError

SINGLE = np.float32
DOUBLE = np.float64

_PRECISION = {"single": SINGLE, "double": DOUBLE}

_grad_enabled = True
_finite_checks = True


def resolve_dtype(mode: Union[str, np.dtype, type]) -> np.dtype:
    """Map a precision mode name ('single'/'double') or dtype to a dtype."""
    if isinstance(mode, str):
        try:
            return np.dtype(_PRECISION[mode])
        except KeyError:
            raise ContractError(f"unknown precision mode {mode!r}") from None
    dt = np.dtype(mode)
    if dt not in (np.dtype(SINGLE), np.dtype(DOUBLE)):
        raise ContractError(f"unsupported dtype {dt}; use single or double")
    return dt


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _check_finite(data: np.ndarray, op: str) -> None:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op {op!r}")


class Tensor:
    """N-dimensional float array, optionally participating in the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backprop", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.ascontiguousarray(arr, dtype=resolve_dtype(dtype))
        elif arr.dtype not in (np.dtype(SINGLE), np.dtype(DOUBLE)):
            arr = np.ascontiguousarray(arr, dtype=SINGLE)
        else:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backprop: Optional[Callable] = None
        self._op = "leaf"

    # -- taped-node construction -------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"],
                 backprop: Callable, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backprop = backprop
        else:
            out.requires_grad = False
            out._parents = ()
            out._backprop = None
        out._op = op
        return out

    # -- basic introspection -----------------------------------------------

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
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad}, op={self._op!r})")

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__

    def backward(self) -> None:
        backward(self)


# -- constructors ------------------------------------------------------------


def tensor(data, requires_grad: bool = False, dtype=SINGLE) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=SINGLE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=resolve_dtype(dtype)), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False, dtype=SINGLE) -> Tensor:
    return Tensor(np.ones(shape, dtype=resolve_dtype(dtype)), requires_grad=requires_grad)


# -- elementwise ops ----------------------------------------------------------


def _coerce_operands(a: Tensor, b, op: str):
    """Return (b_data_or_scalar, b_is_tensor); enforce equal shapes or scalar b."""
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")
        return b, True
    if np.isscalar(b):
        return float(b), False
    raise ShapeError(f"{op}: second operand must be a Tensor or scalar, got {type(b)!r}")


def add(a: Tensor, b) -> Tensor:
    b, is_t = _coerce_operands(a, b, "add")
    if is_t:
        out = a.data + b.data

        def backprop(g):
            return g, g

        return Tensor._from_op(out, (a, b), backprop, "add")
    out = a.data + b
    return Tensor._from_op(out, (a,), lambda g: (g,), "add")


def sub(a: Tensor, b) -> Tensor:
    b, is_t = _coerce_operands(a, b, "sub")
    if is_t:
        out = a.data - b.data

        def backprop(g):
            return g, -g

        return Tensor._from_op(out, (a, b), backprop, "sub")
    out = a.data - b
    return Tensor._from_op(out, (a,), lambda g: (g,), "sub")


def mul(a: Tensor, b) -> Tensor:
    b, is_t = _coerce_operands(a, b, "mul")
    if is_t:
        out = a.data * b.data
        a_data, b_data = a.data, b.data

        def backprop(g):
            return g * b_data, g * a_data

        return Tensor._from_op(out, (a, b), backprop, "mul")
    out = a.data * b
    return Tensor._from_op(out, (a,), lambda g, s=b: (g * s,), "mul")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backprop(g):
        return (g * out,)

    return Tensor._from_op(out, (a,), backprop, "exp")


def minimum(a: Tensor, b) -> Tensor:
    """Elementwise min; on ties the gradient follows the first operand."""
    b, is_t = _coerce_operands(a, b, "min")
    b_data = b.data if is_t else b
    take_a = a.data <= b_data
    out = np.where(take_a, a.data, b_data)
    if is_t:
        def backprop(g):
            return g * take_a, g * ~take_a

        return Tensor._from_op(out, (a, b), backprop, "min")

    def backprop1(g):
        return (g * take_a,)

    return Tensor._from_op(out, (a,), backprop1, "min")


# -- reductions ----------------------------------------------------------------


def _normalize_axes(axes, ndim: int, op: str):
    if axes is None:
        return None
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(ax) for ax in axes)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"{op}: axis {ax} out of range for ndim {ndim}")
    return tuple(sorted(ax % ndim for ax in axes))


def reduce_sum(a: Tensor, axes=None) -> Tensor:
    if a.data.size == 0:
        raise DomainError("sum of an empty tensor")
    axes = _normalize_axes(axes, a.data.ndim, "sum")
    out = a.data.sum(axis=axes)
    in_shape = a.data.shape

    def backprop(g):
        if axes is None:
            return (np.broadcast_to(g, in_shape).astype(g.dtype, copy=True),)
        expand = list(in_shape)
        keep = [1 if i in axes else s for i, s in enumerate(in_shape)]
        g = np.reshape(g, keep)
        return (np.broadcast_to(g, expand).astype(g.dtype, copy=True),)

    return Tensor._from_op(np.asarray(out), (a,), backprop, "sum")


def reduce_mean(a: Tensor, axes=None) -> Tensor:
    if a.data.size == 0:
        raise DomainError("mean of an empty tensor")
    naxes = _normalize_axes(axes, a.data.ndim, "mean")
    count = a.data.size if naxes is None else int(np.prod([a.data.shape[i] for i in naxes]))
    summed = reduce_sum(a, axes)
    return mul(summed, 1.0 / count)


def reduce_max(a: Tensor):
    """Global max with its first row-major index; returns (Tensor, index tuple)."""
    if a.data.size == 0:
        raise DomainError("max of an empty tensor")
    flat_idx = int(np.argmax(a.data))
    idx = np.unravel_index(flat_idx, a.data.shape)
    out = np.asarray(a.data[idx])
    in_shape = a.data.shape
    dtype = a.data.dtype

    def backprop(g):
        dx = np.zeros(in_shape, dtype=dtype)
        dx[idx] = g
        return (dx,)

    return Tensor._from_op(out, (a,), backprop, "max"), idx


# -- backward pass --------------------------------------------------------------


def _topo_order(root: Tensor) -> list:
    order: list = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        nxt = next(parents, None)
        if nxt is None:
            order.append(node)
            stack.pop()
        elif id(nxt) not in visited:
            visited.add(id(nxt))
            stack.append((nxt, iter(nxt._parents)))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into every requires_grad leaf below `loss`."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backprop is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backprop(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


# -- finite-difference verification ---------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be scalar-valued and `x` double precision; the relative error
    per element is |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
    """
    if x.data.dtype != np.dtype(DOUBLE):
        raise ContractError("grad_check requires a double-precision input")
    probe = Tensor(x.data.copy(), requires_grad=True)
    loss = f(probe)
    if loss.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    backward(loss)
    analytic = np.zeros_like(probe.data) if probe.grad is None else probe.grad.copy()

    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(probe).item()
        flat[i] = orig - eps
        lo = f(probe).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))
